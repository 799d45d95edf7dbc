import logging
from pathlib import Path

from fastapi import HTTPException, status

from database.artifact import ArtifactStore
from interface.conformal import CalibrationResult
from interface.error import StaleArtifact
from interface.evaluation import EvaluationReport
from interface.predictor import GapPredictorModel
from interface.stopping import StoppingDecision, StoppingQuery
from interface.trace import BoundTrace, Incumbent
from service.gap_predictor import predict_series
from utils.string import stable_hash

logger = logging.getLogger(__name__)


class StoppingAdvisor:
    """Applies a calibrated threshold to the state of a running solve."""

    def __init__(
        self,
        model: GapPredictorModel,
        calibration: CalibrationResult,
        report: EvaluationReport | None = None,
    ):
        if calibration.model_hash and calibration.model_hash != stable_hash(model):
            raise StaleArtifact("calibration was computed for another model")
        self.model = model
        self.calibration = calibration
        self.report = report

    @classmethod
    def from_directory(cls, directory: str | Path) -> "StoppingAdvisor":
        store = ArtifactStore(directory)
        model = store.read_model(ArtifactStore.MODEL, GapPredictorModel)
        calibration = store.read_model(ArtifactStore.CALIBRATION, CalibrationResult)
        report = None
        if store.exists(ArtifactStore.REPORT):
            report = store.read_model(ArtifactStore.REPORT, EvaluationReport)
        logger.info("loaded stopping advisor from %s (kappa=%g)", directory, calibration.kappa)
        return cls(model, calibration, report)

    def decide(self, query: StoppingQuery) -> StoppingDecision:
        incumbents = []
        previous = None
        for sample in query.samples:
            if sample.incumbent_id is not None and sample.incumbent_id != previous:
                incumbents.append(Incumbent(tick=sample.tick, objective=sample.upper, solution=[]))
                previous = sample.incumbent_id
        trace = BoundTrace(instance_id="live", samples=query.samples, incumbents=incumbents)
        series = predict_series(self.model, trace, query.theta_params)
        values = series.value_array
        rolling = float(values.min())
        kappa = self.calibration.kappa
        return StoppingDecision(
            tick=query.samples[-1].tick,
            predicted_gap=float(values[-1]),
            rolling_min_gap=rolling,
            kappa=kappa,
            epsilon=self.calibration.epsilon,
            alpha=self.calibration.alpha,
            stop=rolling < kappa,
        )


_active: StoppingAdvisor | None = None


def install_advisor(advisor: StoppingAdvisor | None) -> None:
    global _active
    _active = advisor


def depends_advisor() -> StoppingAdvisor:
    if _active is None:
        raise HTTPException(
            status_code=status.HTTP_404_NOT_FOUND,
            detail="No calibrated model is loaded",
        )
    return _active
