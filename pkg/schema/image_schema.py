import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator


class RawImage(BaseModel):
    """Decoded 8-bit image; pixels are (height, width, channels), row-major, interleaved."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    width: int = Field(..., ge=1)
    height: int = Field(..., ge=1)
    channels: int = Field(..., ge=1)
    pixels: np.ndarray

    @model_validator(mode="after")
    def _check_pixels(self):
        if self.pixels.dtype != np.uint8:
            raise ValueError(f"Pixels must be uint8, got {self.pixels.dtype}.")
        if self.pixels.shape != (self.height, self.width, self.channels):
            raise ValueError(f"Pixel array {self.pixels.shape} does not match "
                             f"{(self.height, self.width, self.channels)}.")
        return self

    @classmethod
    def from_array(cls, pixels: np.ndarray) -> "RawImage":
        arr = np.asarray(pixels, dtype=np.uint8)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        h, w, c = arr.shape
        return cls(width=w, height=h, channels=c, pixels=arr)
