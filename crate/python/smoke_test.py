"""Smoke test for the lesionforge_py extension.

Build and install first:  pip install --no-build-isolation ./crates/python
"""

import json
import math
import tempfile
from pathlib import Path

import lesionforge_py as lf


def main():
    img, mask = lf.pathological_phantom(3, size=32)
    assert len(img) == 32 and len(img[0]) == 32
    assert lf.dice(mask, mask) == 1.0
    assert lf.hausdorff(mask, mask, 100.0) == 0.0
    empty = [[False] * 32 for _ in range(32)]
    assert lf.hausdorff(mask, empty) is None
    try:
        lf.dice(mask, [[True]])
    except lf.LesionForgeError:
        pass
    else:
        raise AssertionError("shape mismatch not reported")

    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        assert lf.generate_phantoms(tmp / "data", 2, 2, seed=1, size=32) == (2, 2)
        cfg = {"epochs": 1, "decay_start_epoch": 1, "image_size": 32,
               "network": {"generator": {"n_blocks": 1, "n_masks": 3}}}
        ckpt = Path(lf.train(tmp / "data", tmp / "run", json.dumps(cfg)))
        gen = lf.Generator.load(ckpt / "G_P.safetensors")
        healthy = lf.healthy_phantom(0, size=32)
        a, b = gen.synthesize(healthy, samples=2, dropout=True, seed=5)
        assert a["output"] != b["output"]
        c, d = gen.synthesize(healthy, samples=2, dropout=False)
        assert c["output"] == d["output"]
        for row in a["background_attention"]:
            assert all(0.0 <= v <= 1.0 and math.isfinite(v) for v in row)
        assert lf.augment(ckpt / "G_P.safetensors", tmp / "data", tmp / "aug", k=2, size=32) == 4
        try:
            lf.train(tmp / "missing", tmp / "run2")
        except (ValueError, lf.LesionForgeError):
            pass
        else:
            raise AssertionError("missing dataset accepted")
    print("python smoke test OK")


if __name__ == "__main__":
    main()
