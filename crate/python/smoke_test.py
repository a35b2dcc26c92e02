"""Smoke test for the qa_expert extension module.

Build and install it first:
    pip install maturin
    maturin develop --release -m crates/python/Cargo.toml
"""

import math
import random

import qa_expert


def planted_rank_one(rng, dims):
    vecs = [[rng.random() + 0.1 for _ in range(n)] for n in dims]
    entries = []
    for i in range(dims[0]):
        for j in range(dims[1]):
            for k in range(dims[2]):
                for l in range(dims[3]):
                    v = vecs[0][i] * vecs[1][j] * vecs[2][k] * vecs[3][l]
                    entries.append(((i, j, k, l), v))
    return entries


def check_cp():
    rng = random.Random(3)
    dims = (4, 3, 3, 5)
    model = qa_expert.fit_cp(planted_rank_one(rng, dims), dims, rank=1, lambda_x=0.0, seed=1)
    assert len(model.factors) == 4
    assert [len(f) for f in model.factors] == list(dims)
    assert model.fit_history[-1] > 0.999, model.fit_history[-1]
    history = model.objective_history
    assert all(b <= a + 1e-9 for a, b in zip(history, history[1:]))


POSTS = """<?xml version="1.0" encoding="utf-8"?>
<posts>
  <row Id="1" PostTypeId="1" OwnerUserId="1" Score="2" Tags="&lt;a&gt;" AcceptedAnswerId="2" />
  <row Id="2" PostTypeId="2" ParentId="1" OwnerUserId="2" />
  <row Id="3" PostTypeId="2" ParentId="1" OwnerUserId="3" />
</posts>
"""

VOTES = """<?xml version="1.0" encoding="utf-8"?>
<votes>
  <row Id="1" PostId="2" VoteTypeId="2" />
  <row Id="2" PostId="2" VoteTypeId="2" />
</votes>
"""

USERS = """<?xml version="1.0" encoding="utf-8"?>
<users>
  <row Id="1" />
  <row Id="2" />
  <row Id="3" />
</users>
"""


def check_reputation():
    scores = qa_expert.reputation(POSTS, VOTES, USERS, "site")
    assert (2, "site/a", 35) in scores, scores


def check_metrics():
    assert math.isclose(qa_expert.mean_reciprocal_rank([2, 4, 10]), 0.28333333333333333, abs_tol=1e-9)
    assert qa_expert.precision_at_k([5, 4, 3, 2, 1], [1, 2, 3, 4, 5], 5) == 1.0
    assert qa_expert.precision_at_k([1, 2], [3], 2) == 0.0
    assert qa_expert.z_score(0, 0) == 0.0
    assert math.isclose(qa_expert.z_score(9, 7), 2 / 4)
    try:
        qa_expert.fit_cp([], (1, 1, 1, 1), rank=0)
    except ValueError:
        pass
    else:
        raise AssertionError("rank 0 should raise ValueError")


if __name__ == "__main__":
    check_cp()
    check_reputation()
    check_metrics()
    print("smoke test passed")
