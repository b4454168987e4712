from typing import Any, Literal, Optional

from pydantic import BaseModel, Field


class MakeSyntheticRequest(BaseModel):
    out: str
    seed: int = 0
    # any SyntheticSpec field, e.g. {"n_frames": 20, "corrupt_fraction": 0.3}
    spec: dict[str, Any] = Field(default_factory=dict)
    depth_format: Literal["pfm", "png"] = "pfm"


class MakeSyntheticResponse(BaseModel):
    scene: str
    n_frames: int
    height: int
    width: int
    train: list[int]
    test: list[int]
    corrupted: list[int]


class RefineMasksRequest(BaseModel):
    scene: str
    depth_tolerance: float = Field(0.05, gt=0)
    dilate_radius: int = Field(2, ge=0)
    erode_radius: int = Field(2, ge=0)
    stride: int = Field(1, ge=1)
    visibility: Literal["consistent", "front"] = "consistent"
    # overrides box.json when given: {"center": [...], "half_extents": [...], "rotation": [[...]]}
    box: Optional[dict[str, Any]] = None
    # write the updated scene here; default is in place
    out: Optional[str] = None


class RefineMasksResponse(BaseModel):
    scene: str
    mask_pixels: list[int]
    fallback: bool
    cleared_inpaintings: bool


class InpaintRequest(BaseModel):
    scene: str
    # external tool with {image} {mask} {out} placeholders; None uses the built-in fill
    command: Optional[str] = None
    timeout: float = Field(300.0, gt=0)
    workers: int = Field(1, ge=1)


class InpaintResponse(BaseModel):
    scene: str
    frames: int
    inpainter: str


class TrainRequest(BaseModel):
    scene: str
    out: str
    # key=value or JSON text, as in a config file; ``config`` entries override it
    config_text: Optional[str] = None
    config: dict[str, Any] = Field(default_factory=dict)


class TrainResponse(BaseModel):
    out: str
    checkpoint: str
    active: list[int]
    confidences: dict[str, float]
    history: list[dict[str, Any]]
    steps: int


class RenderRequest(BaseModel):
    checkpoint: str
    scene: str
    out: str
    frames: Optional[list[int]] = None
    head: Literal["mv", "view"] = "mv"
    n_samples: Optional[int] = Field(None, ge=1)
    depth_format: Literal["pfm", "png"] = "pfm"


class RenderResponse(BaseModel):
    out: str
    rgb: list[str]
    depth: list[str]


class EvalRequest(BaseModel):
    checkpoint: str
    scene: str
    out: Optional[str] = None
    frames: Optional[list[int]] = None
    region: Literal["mask", "unmasked", "full"] = "mask"
    n_samples: Optional[int] = Field(None, ge=1)


class EvalResponse(BaseModel):
    region: str
    # None where a metric is undefined (no scorable frame)
    scene: dict[str, Optional[float]]
    frames: list[dict[str, Any]]
    skipped: list[int]


class ErrorResponse(BaseModel):
    error: str
    detail: list[str] = Field(default_factory=list)
