import subprocess
import sys
from pathlib import Path

import pytest

DEMOS = Path(__file__).resolve().parent.parent / "demos"


@pytest.mark.parametrize("script,args", [("01_counter.py", ["{tmp}"]), ("02_timing_and_resources.py", []),
                                         ("03_equalizer.py", ["300"]), ("04_scan_engine.py", [])])
def test_demo_script_runs(script, args, tmp_path):
    argv = [a.format(tmp=tmp_path) for a in args]
    r = subprocess.run([sys.executable, str(DEMOS / script), *argv], capture_output=True, text=True, timeout=300)
    assert r.returncode == 0, r.stderr
    assert r.stdout.strip()
