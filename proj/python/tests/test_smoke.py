# Copyright 2026 The DefXAttn Authors. All Rights Reserved.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
# http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
# ==============================================================================
"""Smoke tests for the Python face of the core.

Runnable directly (``python test_smoke.py``) or under pytest; every check is a
plain ``test_*`` function using asserts only.
"""
import math
import random

import _defxattn as dx


def test_version():
    assert dx.__version__ == "0.1.0"


def test_softmax_rows_normalize():
    rng = random.Random(7)
    values = [rng.uniform(-3.0, 3.0) for _ in range(4 * 5)]
    out = dx.softmax(values, [4, 5])
    assert len(out) == 20
    for r in range(4):
        row = out[5 * r : 5 * r + 5]
        assert all(v > 0.0 for v in row)
        assert abs(sum(row) - 1.0) < 1e-12
        # Order is preserved within a row.
        raw = values[5 * r : 5 * r + 5]
        assert sorted(range(5), key=raw.__getitem__) == sorted(
            range(5), key=row.__getitem__
        )


def test_matmul_against_plain_loops():
    rng = random.Random(11)
    a = [rng.gauss(0.0, 1.0) for _ in range(3 * 4)]
    b = [rng.gauss(0.0, 1.0) for _ in range(4 * 2)]
    out = dx.matmul(a, 3, 4, b, 2)
    for i in range(3):
        for j in range(2):
            want = sum(a[4 * i + p] * b[2 * p + j] for p in range(4))
            assert abs(out[2 * i + j] - want) < 1e-12


def test_gelu_matches_erf_form():
    xs = [-2.0, -0.5, 0.0, 0.3, 1.7]
    out = dx.gelu(xs)
    for x, y in zip(xs, out):
        want = 0.5 * x * (1.0 + math.erf(x / math.sqrt(2.0)))
        assert abs(y - want) < 1e-12


def test_layernorm_standardizes_rows():
    rng = random.Random(13)
    values = [rng.uniform(-2.0, 5.0) for _ in range(3 * 8)]
    out = dx.layernorm(values, 3, 8)
    for r in range(3):
        row = out[8 * r : 8 * r + 8]
        mean = sum(row) / 8.0
        var = sum((v - mean) ** 2 for v in row) / 8.0
        assert abs(mean) < 1e-12
        assert abs(var - 1.0) < 1e-3  # eps shifts the variance slightly


def test_ncc_loss_is_minimal_for_identical_volumes():
    rng = random.Random(17)
    vol = [rng.uniform(0.0, 1.0) for _ in range(6 * 6 * 6)]
    other = [rng.uniform(0.0, 1.0) for _ in range(6 * 6 * 6)]
    same = dx.ncc_loss(vol, vol, [6, 6, 6], window=3)
    diff = dx.ncc_loss(vol, other, [6, 6, 6], window=3)
    assert same < diff  # more negative = better alignment
    assert same < -0.9  # perfect alignment saturates near -1


def test_zero_offset_equivalence_is_exact():
    for seed in (1, 2, 3):
        assert dx.zero_offset_equivalence(seed) == 0.0


def test_expansion_cost_ratio():
    assert dx.expansion_cost_ratio(3, 3, 3) == 27.0
    assert dx.expansion_cost_ratio(1, 1, 1) == 1.0
    assert dx.expansion_cost_ratio(3, 1, 1) == 3.0


def main():
    checks = [v for k, v in sorted(globals().items()) if k.startswith("test_")]
    for check in checks:
        check()
        print(f"ok {check.__name__}")
    print(f"{len(checks)} checks passed")


if __name__ == "__main__":
    main()
