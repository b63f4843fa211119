"""Regenerate the MAT-file fixtures used by the core integration tests.

Written with scipy so the Rust reader is checked against an independent
writer. Rerun only when the fixtures must change.
"""

from pathlib import Path

import numpy as np
from scipy.io import savemat

OUT = Path(__file__).resolve().parent.parent / "crates" / "core" / "tests" / "data"


def main() -> None:
    OUT.mkdir(parents=True, exist_ok=True)
    plain = {
        "X098_DE_time": np.array([[1.0], [2.0], [3.0]]),
        "X098_FE_time": np.array([[-0.5], [0.25]], dtype=np.float32),
        "X098RPM": np.array([[1797.0]]),
    }
    savemat(OUT / "x098.mat", plain, format="5", do_compression=False)
    ramp = np.arange(1000, dtype=np.float64).reshape(-1, 1) / 8.0
    savemat(OUT / "x098_compressed.mat", {"X098_DE_time": ramp}, format="5", do_compression=True)


if __name__ == "__main__":
    main()
