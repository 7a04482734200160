#!/usr/bin/env python3
"""Smoke test for the `edg` Python extension module.

Builds nothing itself: it locates the compiled cdylib under target/
(release preferred), copies it into a temp directory under the importable
name, and runs a tiny end-to-end reconstruction.

Usage:
    cargo build -p edg-py            # or --release
    python3 python/smoke_test.py
"""

import math
import shutil
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent


def import_edg():
    candidates = [
        REPO / "target" / "release" / "libedg.so",
        REPO / "target" / "debug" / "libedg.so",
        REPO / "target" / "release" / "libedg.dylib",
        REPO / "target" / "debug" / "libedg.dylib",
    ]
    built = next((p for p in candidates if p.exists()), None)
    if built is None:
        sys.exit("no compiled extension found; run `cargo build -p edg-py` first")
    tmp = Path(tempfile.mkdtemp(prefix="edg-py-"))
    shutil.copy2(built, tmp / "edg.so")
    sys.path.insert(0, str(tmp))
    import edg

    return edg


def main():
    edg = import_edg()

    # Generators and basic geometry.
    cloud = edg.gen_gaussian(60, 3, seed=7)
    assert cloud.n == 60 and cloud.r == 3
    pts = cloud.points()
    assert len(pts) == 60 and len(pts[0]) == 3
    centroid = [sum(row[d] for row in pts) / 60 for d in range(3)]
    assert max(abs(c) for c in centroid) < 1e-12, "cloud must be centered"

    d = cloud.edm()
    assert abs(d[5][9] - sum((pts[5][k] - pts[9][k]) ** 2 for k in range(3))) < 1e-10

    # CSV round trip.
    again = edg.PointCloud.from_csv(cloud.to_csv())
    assert edg.procrustes_distance(cloud, again) < 1e-12

    # Classical MDS inverts the distance matrix up to rigid motion.
    mds = edg.classical_mds(d, 3)
    assert edg.procrustes_distance(cloud, mds) < 1e-8

    # Sample a third of the degrees-of-freedom budget ×3 and reconstruct.
    m = edg.oversampling_to_m(3.0, 60, 3)
    samples = edg.sample_and_observe(cloud, m, seed=11)
    assert samples.m == m and len(samples) == m
    i, j = samples.pairs()[0]
    assert 1 <= i < j <= 60
    assert math.isclose(samples.d2()[0], d[i - 1][j - 1], rel_tol=1e-12)

    text_rt = edg.SampleSet.from_text(samples.to_text())
    assert text_rt.pairs() == samples.pairs()

    result = edg.solve(samples, rank=3, truth=cloud)
    assert result.converged, "solver failed to converge on an easy instance"
    assert result.relative_error < 1e-6, f"relative error {result.relative_error}"
    assert result.points.n == 60 and result.points.r == 3

    # Solving without the reference still returns the configuration.
    blind = edg.solve(samples, rank=3, mode="range")
    assert blind.relative_error is None
    assert edg.procrustes_distance(blind.points, cloud) < 1e-6

    # Errors surface as ValueError, not panics.
    try:
        edg.solve(samples, rank=3, mode="bogus")
    except ValueError:
        pass
    else:
        sys.exit("expected ValueError for an unknown mode")

    print("edg python smoke test: ok")


if __name__ == "__main__":
    main()
