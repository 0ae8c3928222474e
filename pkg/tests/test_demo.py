import numpy as np
import pytest

from rioflow.demo import BANDS, design_filters, oracle, run_demo, sine_pcm, write_pcm


def direct_form(x, c):
    """Plain-loop direct-form-I biquad, kept apart from scipy on purpose."""
    b0, b1, b2, a1, a2 = c
    y = [0.0] * len(x)
    x1 = x2 = y1 = y2 = 0.0
    for i, v in enumerate(x):
        y[i] = b0 * v + b1 * x1 + b2 * x2 - a1 * y1 - a2 * y2
        x2, x1, y2, y1 = x1, v, y1, y[i]
    return np.array(y)


@pytest.fixture(scope="module")
def pcm(tmp_path_factory):
    f = tmp_path_factory.mktemp("pcm") / "in.pcm"
    write_pcm(f, sine_pcm(400))
    return f


def test_filter_dc_gains():
    c = design_filters()
    dc = {b: (c[b][0] + c[b][1] + c[b][2]) / (1 + c[b][3] + c[b][4]) for b in BANDS}
    assert dc["low"] == pytest.approx(1.0) and dc["high"] == pytest.approx(0.0, abs=1e-12)
    assert dc["mid"] == pytest.approx(0.0, abs=1e-12)


def test_oracle_agrees_with_plain_loop():
    x = sine_pcm(600)
    c = design_filters()
    gains = (0.5, 1.0, 2.0)
    y = sum(g * direct_form(x / 32768.0, c[b]) for g, b in zip(gains, BANDS))
    ref = np.clip(np.rint(y * 32768.0), -32768, 32767)
    assert np.abs(oracle(x, gains) - ref).max() <= 1


def test_unity_gains_track_reference(pcm):
    r = run_demo(pcm, samples=400)
    assert len(r.samples) == 400
    assert r.ticks_per_sample == 23 and set(np.diff(r.emission_ticks)) == {23}
    assert r.underruns == 0 and set(r.jitter) == {0}
    assert np.mean(r.lsb_errors() <= 1) >= 0.999


def test_zero_gains_are_silent(pcm):
    r = run_demo(pcm, samples=200, gains=(0.0, 0.0, 0.0))
    assert not r.samples.any() and r.underruns == 0


def test_slow_dma_underruns_hold_last_sample(pcm):
    # every element takes longer to cross than one sample period
    r = run_demo(pcm, samples=60, dma={"audio": {"base": 0, "per_element": 40, "burst": 1}})
    assert r.underruns > 0
    assert len(r.samples) >= 60
    assert set(r.jitter) == {0}
    log = r.run.devices[0]
    held = [i for i, (t, v) in enumerate(log.log) if any(e[0] == t for e in log.events)]
    assert held and all(log.log[i][1] == log.log[i - 1][1] for i in held if i)


def test_peak_meter_sees_the_level(pcm):
    r = run_demo(pcm, samples=200)
    peak = r.run.outputs["peak"].to_python()
    assert peak == pytest.approx(r.samples.max() / 32768.0, abs=1 / 32768)
