from fastapi import APIRouter, Depends, HTTPException, status
from fastapi_restful.cbv import cbv

from interface.response import JSONResponse
from service.advisor import StoppingAdvisor, depends_advisor
from service.evaluation import method_summary

router = APIRouter(tags=["report"], prefix="/report")


@cbv(router)
class Report:
    advisor: StoppingAdvisor = Depends(depends_advisor)

    @router.get("/summary", description="Per-method table of the last evaluation")
    async def summary(self):
        if self.advisor.report is None:
            raise HTTPException(
                status_code=status.HTTP_404_NOT_FOUND,
                detail="No evaluation report has been produced",
            )
        report = self.advisor.report
        return JSONResponse.ok(
            {
                "rows": [row.model_dump() for row in method_summary(report)],
                "coverage": report.aggregates.coverage,
                "kappa": report.kappa,
            },
        )
