import os
import uvicorn
import logging
from contextlib import asynccontextmanager

from fastapi import FastAPI
from dotenv import load_dotenv

from interface.error import MissingUpstream, StaleArtifact
from router import report, stopping
from service.advisor import StoppingAdvisor, install_advisor

load_dotenv(verbose=True)
logging.getLogger("uvicorn.access").setLevel(logging.WARNING)
logger = logging.getLogger(__name__)


@asynccontextmanager
async def lifespan(server: FastAPI):
    directory = os.environ.get("STOPPING_ARTIFACT_DIR", "runs/default")
    try:
        install_advisor(StoppingAdvisor.from_directory(directory))
    except (MissingUpstream, StaleArtifact) as error:
        logger.warning("advisor not loaded: %s", error)
    yield
    install_advisor(None)


app = FastAPI(
    lifespan=lifespan,
    title="Conformal Stopping Advisor",
    description="Calibrated early termination for branch-and-bound solves",
    version="0.1",
)

app.include_router(stopping.router)
app.include_router(report.router)


@app.get("/")
async def root():
    return {"message": "Conformal Stopping Advisor"}


def run() -> None:
    uvicorn.run(
        app,
        host=os.environ.get("STOPPING_HOST", "0.0.0.0"),
        port=int(os.environ.get("STOPPING_PORT", "9001")),
    )


if __name__ == "__main__":
    run()
