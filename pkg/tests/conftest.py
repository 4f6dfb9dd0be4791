import numpy as np
import pytest

from xrpoint.calib import calibrate_from_card
from xrpoint.trial import Modality, Outcome, Pressure, TrialRecord, UiMode


@pytest.fixture
def calib():
    # 4 px/mm at 600 mm
    return calibrate_from_card(342.40, 215.92, 600.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_record(**overrides) -> TrialRecord:
    """A clean hand hit with plausible defaults; override any field."""
    base = dict(
        participant_id=0,
        block_idx=0,
        trial_idx=5,
        is_practice=False,
        modality=Modality.HAND,
        ui_mode=UiMode.STATIC,
        pressure=Pressure.SELF_PACED,
        target_angle_deg=0.0,
        W_px=50.0,
        D_px=750.0,
        ID_bits=4.0,
        start_x=905.0,
        start_y=720.0,
        target_x=1655.0,
        target_y=720.0,
        outcome=Outcome.HIT,
        selected_element="target0",
        rt_ms=900.0,
        first_entry_ms=650.0,
        verification_ms=250.0,
        hover_total_ms=250.0,
        submovement_count=1,
        endpoint_x=1657.0,
        endpoint_y=721.0,
        width_scale_applied=1.0,
        declutter_active=False,
        policy_triggered=False,
        consecutive_errors_at_start=0,
        px_per_mm=4.0,
        ppd=41.8879,
        viewing_distance_mm=600.0,
        dpr=1.0,
        zoom=1.0,
        fullscreen=True,
        tab_hidden_ms=0.0,
        viewport_w_px=2560,
        viewport_h_px=1440,
        agent_profile="fixture",
        seed=1,
        tick_count=55,
    )
    base.update(overrides)
    return TrialRecord(**base)


# ---------------------------------------------------------------------------
# acceptance report: one PASS/FAIL line per criterion at the end of the run

_ACCEPTANCE: dict[int, tuple[str, str, str]] = {}


@pytest.fixture
def detail(request):
    """Attach a short measured-values string to the acceptance line."""

    def attach(text: str) -> None:
        request.node.user_properties.append(("detail", text))
        print(text)

    return attach


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or report.when not in ("setup", "call"):
        return
    if report.when == "setup" and report.passed:
        return
    number, label = marker.args
    details = "; ".join(v for k, v in item.user_properties if k == "detail")
    _ACCEPTANCE[number] = (label, "PASS" if report.passed else "FAIL", details)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        label, status, details = _ACCEPTANCE[number]
        line = f"[{status}] criterion {number:2d}: {label}"
        terminalreporter.write_line(line + (f" ({details})" if details else ""))
