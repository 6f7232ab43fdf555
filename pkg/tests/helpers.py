"""Shared construction helpers for the test suite."""

from __future__ import annotations

import numpy as np

from portsel.panel import CharacteristicsPanel, MonthBlock, PredictorSpec


def panel_from_arrays(month_data, char_names, binary=(), square_exclusions=(),
                      interaction_exclusions=(), size_column=None):
    """Build a CharacteristicsPanel from {month: (firm_ids, values, ret_fwd)}."""
    blocks = {}
    for month, (ids, values, ret) in month_data.items():
        blocks[month] = MonthBlock(
            firm_ids=tuple(ids),
            values=np.asarray(values, dtype=np.float64).reshape(len(ids), -1),
            ret_fwd=np.asarray(ret, dtype=np.float64),
        )
    return CharacteristicsPanel(
        char_names=list(char_names),
        months=sorted(month_data),
        blocks=blocks,
        binary=frozenset(binary),
        square_exclusions=frozenset(square_exclusions),
        interaction_exclusions=frozenset(interaction_exclusions),
        size_column=size_column,
    )


def random_panel(rng, n_months=6, n_firms=8, n_chars=2, start=200001,
                 ret_scale=0.05):
    """Random panel with sequential months and Gaussian characteristics."""
    months = {}
    year, month = divmod(start, 100)
    for _ in range(n_months):
        m = year * 100 + month
        ids = [f"F{i:03d}" for i in range(n_firms)]
        values = rng.standard_normal((n_firms, n_chars))
        ret = rng.standard_normal(n_firms) * ret_scale
        months[m] = (ids, values, ret)
        month += 1
        if month > 12:
            year, month = year + 1, 1
    names = [f"c{j}" for j in range(n_chars)]
    return panel_from_arrays(months, names)


def bases_only_spec(panel):
    return PredictorSpec(base_names=tuple(panel.char_names),
                         include_squares=False, include_interactions=False)
