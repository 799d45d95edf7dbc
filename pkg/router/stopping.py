from fastapi import APIRouter, Depends, HTTPException, status
from fastapi_restful.cbv import cbv

from interface.error import StoppingError
from interface.response import JSONResponse
from interface.stopping import StoppingQuery
from service.advisor import StoppingAdvisor, depends_advisor

router = APIRouter(tags=["stopping"], prefix="/stopping")


@cbv(router)
class Stopping:
    advisor: StoppingAdvisor = Depends(depends_advisor)

    @router.get("/calibration", description="Active threshold and its provenance")
    async def calibration(self):
        calibration = self.advisor.calibration
        return JSONResponse.ok(
            {
                "kappa": calibration.kappa,
                "epsilon": calibration.epsilon,
                "alpha": calibration.alpha,
                "c": calibration.c,
                "n": calibration.n,
                "nominal_coverage": calibration.nominal_coverage,
                "config_hash": calibration.config_hash,
                "model_hash": calibration.model_hash,
            },
        )

    @router.post("/decide", description="Whether a running solve may stop now")
    async def decide(self, query: StoppingQuery):
        try:
            decision = self.advisor.decide(query)
        except (StoppingError, ValueError) as error:
            raise HTTPException(status_code=status.HTTP_400_BAD_REQUEST, detail=str(error))
        return JSONResponse.ok(decision.model_dump())
