"""Embedded corn caterpillar counts and a fixed 20%-loss pattern of them.

24 plots (3 treatments x 8 replicates) observed for 9 weeks; the response
is the number of large caterpillars per plot.
"""

import numpy as np

CORN_CSV = """\
We1,We2,We3,We4,We5,We6,We7,We8,We9,Treat
0,0,0,0,0,0,0,0,0,1
0,0,0,0,0,0,0,0,0,1
0,0,0,0,0,0,0,0,0,1
0,0,0,0,0,0,0,0,1,1
0,0,0,0,0,0,0,0,1,1
0,0,0,0,0,0,0,0,1,1
0,0,0,0,0,1,0,1,2,1
0,0,0,0,0,1,0,1,3,1
0,0,0,0,0,0,0,0,0,2
0,0,0,0,0,0,0,0,0,2
0,0,0,0,0,0,0,0,0,2
0,0,0,0,0,0,0,1,0,2
0,0,0,1,1,1,0,1,0,2
0,0,0,0,1,2,1,1,0,2
0,0,0,0,1,2,1,2,1,2
0,0,0,0,2,4,1,2,3,2
0,0,0,0,1,4,3,2,2,3
0,0,0,0,1,5,4,2,3,3
0,0,0,0,0,5,4,2,3,3
0,0,0,0,0,5,5,2,4,3
0,0,0,0,0,4,5,3,4,3
0,0,0,0,0,8,6,3,6,3
0,0,0,0,0,8,7,4,4,3
0,0,0,0,0,9,7,4,4,3
"""

# The same grid with 36 of the 216 responses blanked.
CORN_MISSING_CSV = """\
We1,We2,We3,We4,We5,We6,We7,We8,We9,Treat
0,0,0,0,,0,,0,0,1
0,0,,0,0,0,0,,0,1
0,,0,0,0,0,0,0,0,1
,0,,,0,,0,0,1,1
,,0,0,,0,0,0,1,1
,0,0,0,,0,0,,1,1
0,0,0,0,0,1,,1,2,1
0,0,0,0,0,,0,1,3,1
0,0,,0,0,0,0,0,0,2
0,0,0,0,0,0,0,0,0,2
0,0,0,0,0,0,0,0,0,2
0,0,0,0,0,0,0,1,0,2
0,0,0,1,1,1,0,1,0,2
0,0,0,0,1,,1,1,0,2
,0,,0,1,2,,,1,2
0,0,0,0,2,4,,2,3,2
0,0,0,,1,4,3,,2,3
0,0,0,0,1,5,4,,3,3
0,0,0,0,0,5,4,2,3,3
0,0,0,,0,5,5,2,4,3
0,0,0,0,0,4,,3,4,3
0,0,0,0,0,8,6,3,6,3
,0,,0,0,,7,4,4,3
,,0,0,0,9,,,4,3
"""

# Imputed grid reported for the pattern above (missing cells only, NaN
# elsewhere); used to check zero-imputation agreement in all-zero weeks.
_REPORTED_IMPUTATIONS = {
    (0, 4): 0, (0, 6): 0, (1, 2): 0, (1, 7): 0, (2, 1): 0,
    (3, 0): 0, (3, 2): 0, (3, 3): 0, (3, 5): 0,
    (4, 0): 0, (4, 1): 0, (4, 4): 0,
    (5, 0): 0, (5, 4): 0, (5, 7): 0,
    (6, 6): 0, (7, 5): 0, (8, 2): 0,
    (13, 5): 3,
    (14, 0): 0, (14, 2): 0, (14, 6): 1, (14, 7): 1,
    (15, 6): 1,
    (16, 3): 0, (16, 7): 3,
    (17, 7): 3,
    (19, 3): 0,
    (20, 6): 5,
    (22, 0): 0, (22, 2): 0, (22, 5): 6,
    (23, 0): 0, (23, 1): 0, (23, 6): 0, (23, 7): 1,
}


def _parse(text):
    lines = text.strip().splitlines()[1:]
    grid = []
    treat = []
    for line in lines:
        fields = line.split(",")
        grid.append([float(v) if v != "" else np.nan for v in fields[:-1]])
        treat.append(int(fields[-1]))
    return np.array(grid), np.array(treat)


def load_corn():
    """Return ``(Y, treatment)``: a 24x9 count grid and treatment codes."""
    return _parse(CORN_CSV)


def load_corn_missing():
    """Return ``(Y, treatment)`` with NaN at the 36 blanked cells."""
    return _parse(CORN_MISSING_CSV)


def reported_imputations():
    """Dict ``{(unit, week): value}`` (0-based) of published imputations.

    Covers every blanked cell of :func:`load_corn_missing`.
    """
    return dict(_REPORTED_IMPUTATIONS)
