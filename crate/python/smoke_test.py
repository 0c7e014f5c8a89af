"""Smoke test for the Python extension.

Builds the extension with cargo unless EVOROBOGAMI_SO points at a built
library, then imports it and exercises each binding.
"""

import importlib.util
import json
import os
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def built_library() -> Path:
    if "EVOROBOGAMI_SO" in os.environ:
        return Path(os.environ["EVOROBOGAMI_SO"])
    subprocess.run(["cargo", "build", "-p", "evorobogami-py"], cwd=ROOT, check=True)
    return ROOT / "target" / "debug" / "libevorobogami.so"


def load(lib: Path):
    staging = Path(tempfile.mkdtemp())
    target = staging / "evorobogami.so"
    shutil.copy(lib, target)
    spec = importlib.util.spec_from_file_location("evorobogami", target)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


def main() -> int:
    evo = load(built_library())

    neutral = evo.neutral_genome()
    assert json.loads(neutral)["num_legs"] == 4
    assert evo.validate(neutral) == []

    broken = json.loads(neutral)
    broken["body_scale"][0] = 3.0
    problems = evo.validate(json.dumps(broken))
    assert any(field == "body_scale[0]" for field, _ in problems), problems

    length, spread = evo.features(neutral)
    assert length > 0 and spread >= 0

    assert evo.fitness(10.0, 4.0) == 8.0
    assert evo.fitness(-3.0, 2.0) == -4.0

    walk = evo.simulate(neutral, "ground")
    assert walk["fitness"] == walk["dx"] - 0.5 * abs(walk["dy"])
    mirrored = evo.simulate(evo.mirror(neutral), "ground")
    assert abs(walk["dx"] - mirrored["dx"]) < 1e-6
    assert abs(walk["dy"] + mirrored["dy"]) < 1e-6

    u, p = evo.mann_whitney([1.0, 2.0, 3.0], [4.0, 5.0, 6.0])
    assert u == 0.0 and abs(p - 0.1) < 1e-12

    try:
        evo.simulate(neutral, "moon")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown terrain accepted")

    print(f"ok: neutral design walks dx={walk['dx']:.2f} cm on ground")
    return 0


if __name__ == "__main__":
    sys.exit(main())
