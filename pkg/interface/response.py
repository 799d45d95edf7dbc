from typing import Any

from pydantic import BaseModel


class JSONResponse(BaseModel):
    """Envelope of every stopping-advisor answer."""

    code: int = 200
    message: str = "Success"
    data: dict[str, Any] | None = None

    @classmethod
    def ok(cls, data: dict[str, Any]) -> "JSONResponse":
        return cls(data=data)
