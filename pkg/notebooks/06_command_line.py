# %% [markdown]
# # Driving scenarios from the command line
#
# Every capability is reachable through the ``hybridsim`` command with a
# JSON configuration or a named preset.  This script calls the same
# entry point in-process.

# %%
import json
import tempfile
from pathlib import Path

from hybridsim.cli import main

out = Path(tempfile.mkdtemp())
main(["check-state", "--preset", "example2-violation"])
main(["simulate", "--preset", "example2-violation", "--dt", "1e-3", "--steps", "1500",
      "--out", str(out / "trajectory.csv")])

config = {"preset": "example1", "sweep": {"grid": {"y1": [-0.49, 0.0, 1.0]}},
          "integrator": {"dt": 1e-2, "steps": 100, "order_cap": 4}, "output_path": str(out / "sweep.csv")}
(out / "sweep.json").write_text(json.dumps(config))
main(["sweep", "--config", str(out / "sweep.json")])
print((out / "sweep.csv").read_text())
