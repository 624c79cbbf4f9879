"""Published reference values for the dispersion-type kernel benchmark.

The reference computation uses the inverse-sixth-power radial profile with
inner cutoff 0.1 and reports the moment constants per unit profile
coefficient.  Its figures sit uniformly ~1.3% (G table) and ~3% (k0
components) below the exact improper integrals, consistent with an
unstated finite outer truncation there; comparisons in this package use a
2% band for the G table and report k0 deviations without a pass/fail.

The third k0 component is published as 811 per unit c3, which matches the
plain fourth-moment integral (no 2/3 factor) at the same truncation level;
the 2/3-weighted value would be ~541 at that truncation and 558.5 exactly.
Both conventions are printed wherever the comparison appears, and no
acceptance decision rests on this component.
"""

# G^n_{ijk} per unit coefficient of the owning profile
G_REFERENCE = {
    "G1_100": 41.32,
    "G2_110": 8.264,
    "G2_200": 24.79,
    "G3_111": 1.181,
    "G3_210": 3.542,
    "G3_300": 17.71,
}

# k0 components per unit coefficient: (int g1, int g2 z1^2, third component
# as published -- see the module docstring for the factor-2/3 question)
K0_REFERENCE = (4058.0, 1353.0, 811.0)

# Frank-constant combinations per unit coefficients and (s*)^2
K1_REFERENCE = (83.0, 33.0, 14.0)
K2_REFERENCE = (83.0, 17.0, 4.7)

# |K1 - K2| / K1 for equal coefficients, and the bound when c1 dominates
RATIO_EQUAL_COEFFS = 0.2
RATIO_C1_DOMINANT_BOUND = 0.3

G_TOLERANCE = 0.02
RATIO_TOLERANCE = 0.01
