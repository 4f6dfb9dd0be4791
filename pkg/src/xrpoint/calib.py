"""Display geometry: millimetres, visual degrees and screen pixels.

A calibration is seeded from the on-screen credit-card match: the user
resizes a rectangle until it covers an ISO/IEC 7810 ID-1 card, which fixes
the pixel density of the display. Combined with a viewing distance this
gives pixels per degree of visual angle (PPD), the unit every gaze noise
parameter is expressed in.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

CARD_WIDTH_MM = 85.60
CARD_HEIGHT_MM = 53.98
DEFAULT_VIEWING_DISTANCE_MM = 600.0
ASPECT_TOLERANCE = 0.10


class CalibrationError(ValueError):
    """Raised for non-positive or non-finite calibration inputs."""


def pixels_per_degree(px_per_mm: float, viewing_distance_mm: float) -> float:
    """Pixels subtended by one degree of visual angle at screen centre.

    Uses the exact chord ``2 d tan(0.5 deg)`` rather than the small-angle
    approximation.
    """
    mm_per_deg = 2.0 * viewing_distance_mm * math.tan(math.radians(0.5))
    return mm_per_deg * px_per_mm


@dataclass(frozen=True)
class DisplayCalibration:
    px_per_mm: float
    viewing_distance_mm: float
    ppd: float
    dpr: float = 1.0
    viewport_w_px: int = 2560
    viewport_h_px: int = 1440
    aspect_warning: bool = False

    def __post_init__(self) -> None:
        for name in ("px_per_mm", "viewing_distance_mm", "ppd", "dpr"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise CalibrationError(f"{name} must be positive and finite, got {value!r}")
        if self.viewport_w_px <= 0 or self.viewport_h_px <= 0:
            raise CalibrationError("viewport dimensions must be positive")
        expected = pixels_per_degree(self.px_per_mm, self.viewing_distance_mm)
        if abs(self.ppd - expected) > 1e-9 * expected:
            raise CalibrationError(
                f"ppd {self.ppd!r} inconsistent with px_per_mm and viewing distance "
                f"(expected {expected!r})"
            )

    @classmethod
    def from_density(
        cls,
        px_per_mm: float,
        viewing_distance_mm: float = DEFAULT_VIEWING_DISTANCE_MM,
        dpr: float = 1.0,
        viewport: tuple[int, int] = (2560, 1440),
    ) -> "DisplayCalibration":
        if not (math.isfinite(px_per_mm) and px_per_mm > 0):
            raise CalibrationError(f"px_per_mm must be positive, got {px_per_mm!r}")
        if not (math.isfinite(viewing_distance_mm) and viewing_distance_mm > 0):
            raise CalibrationError(
                f"viewing_distance_mm must be positive, got {viewing_distance_mm!r}"
            )
        return cls(
            px_per_mm=px_per_mm,
            viewing_distance_mm=viewing_distance_mm,
            ppd=pixels_per_degree(px_per_mm, viewing_distance_mm),
            dpr=dpr,
            viewport_w_px=int(viewport[0]),
            viewport_h_px=int(viewport[1]),
        )

    def deg_to_px(self, deg: float) -> float:
        return deg * self.ppd

    def px_to_deg(self, px: float) -> float:
        return px / self.ppd

    def mm_to_px(self, mm: float) -> float:
        return mm * self.px_per_mm


def calibrate_from_card(
    card_w_px: float,
    card_h_px: float,
    viewing_distance_mm: float = DEFAULT_VIEWING_DISTANCE_MM,
    dpr: float = 1.0,
    viewport: tuple[int, int] = (2560, 1440),
) -> DisplayCalibration:
    """Build a calibration from the on-screen size of a matched credit card.

    Pixel density is the mean of the width- and height-derived scales. A
    measured aspect ratio more than 10% away from the card's 85.60/53.98
    sets ``aspect_warning`` but is not fatal.
    """
    for name, value in (
        ("card_w_px", card_w_px),
        ("card_h_px", card_h_px),
        ("viewing_distance_mm", viewing_distance_mm),
        ("dpr", dpr),
    ):
        if not (math.isfinite(value) and value > 0):
            raise CalibrationError(f"{name} must be positive and finite, got {value!r}")

    px_per_mm = 0.5 * (card_w_px / CARD_WIDTH_MM + card_h_px / CARD_HEIGHT_MM)
    card_aspect = CARD_WIDTH_MM / CARD_HEIGHT_MM
    measured_aspect = card_w_px / card_h_px
    warn = abs(measured_aspect - card_aspect) > ASPECT_TOLERANCE * card_aspect

    return DisplayCalibration(
        px_per_mm=px_per_mm,
        viewing_distance_mm=viewing_distance_mm,
        ppd=pixels_per_degree(px_per_mm, viewing_distance_mm),
        dpr=dpr,
        viewport_w_px=int(viewport[0]),
        viewport_h_px=int(viewport[1]),
        aspect_warning=warn,
    )


def deg_to_px(deg: float, calib: DisplayCalibration) -> float:
    return deg * calib.ppd


def px_to_deg(px: float, calib: DisplayCalibration) -> float:
    return px / calib.ppd
