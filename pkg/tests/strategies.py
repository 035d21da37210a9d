"""Hypothesis strategies shared across test modules."""

import hypothesis.strategies as st

from lemuq.netmodel import Branch, Bus


@st.composite
def radial_networks(draw, max_buses: int = 40):
    """Random tree rooted at the slack: each new bus attaches to a prior one."""
    n = draw(st.integers(min_value=2, max_value=max_buses))
    rs = draw(
        st.lists(
            st.floats(min_value=1e-4, max_value=0.3),
            min_size=n - 1,
            max_size=n - 1,
        )
    )
    xs = draw(
        st.lists(
            st.floats(min_value=1e-4, max_value=0.3),
            min_size=n - 1,
            max_size=n - 1,
        )
    )
    parents = [draw(st.integers(min_value=0, max_value=i - 1)) for i in range(1, n)]
    buses = [Bus(i) for i in range(n)]
    branches = [
        Branch(parents[i - 1], i, rs[i - 1], xs[i - 1], f_max=10.0) for i in range(1, n)
    ]
    return buses, branches


@st.composite
def injection_vectors(draw, n: int, scale: float = 1.0):
    vals = draw(
        st.lists(
            st.floats(min_value=-scale, max_value=scale),
            min_size=n,
            max_size=n,
        )
    )
    return vals
