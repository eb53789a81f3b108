"""Exact-arithmetic reference values for the effect-size and covariance tests.

Independent of the package: uses fractions for the rational parts and
mpmath only for square roots. Run it and compare with the frozen numbers
in tests/test_effects.py and tests/test_covariance.py.
"""

from fractions import Fraction as F

import mpmath as mp


def J(df):
    return 1 - F(3, 4 * df - 1)


def main():
    print("J(10)", float(J(10)))
    print("J(98)", float(J(98)))
    print("J(18)", float(J(18)))
    print("J(58)", float(J(58)))

    # posttest: diff 0.5, sd 1, n 50/50
    d = F(1, 2)
    var_d = F(100, 2500) + d * d / (2 * 100)
    print("posttest g", float(J(98) * d), "var_g", float(J(98) ** 2 * var_d), "var_d", float(var_d))

    # posttest: diff 1, sd 1, n 10/10
    print("posttest n10 g", float(J(18)))

    # gains 4 vs 2, pretest sd 4, n 30/30, r 0.7
    d = F(4 - 2, 4)
    var_d = 2 * (1 - F(7, 10)) * F(60, 900) + d * d / (2 * 60)
    print("gains d", float(d), "var_d", float(var_d), "g", float(J(58) * d),
          "var_g", float(J(58) ** 2 * var_d))

    # t = 2, n 50/50
    d = 2 * mp.sqrt(mp.mpf(1) / 50 + mp.mpf(1) / 50)
    print("from t d", d, "g", mp.mpf(J(98).numerator) / J(98).denominator * d)

    # covariance entries and a hand Cholesky of [[0.04, 0.042], [0.042, 0.09]]
    print("rho entry", float(F(7, 10) * F(2, 10) * F(3, 10)))
    print("phi entry", float(F(8, 10) * F(4, 100)))
    l21 = F(42, 1000) / F(2, 10)
    print("L21", float(l21), "L22", mp.sqrt(mp.mpf(9) / 100 - mp.mpf(l21.numerator) ** 2 / l21.denominator ** 2))

    # conjugate normal: y 0.5, v 0.25, prior N(0, 1)
    prec = 1 / F(1, 4) + 1
    print("conjugate mean", float(F(1, 2) / F(1, 4) / prec), "sd", mp.sqrt(mp.mpf(1) / int(prec)))


if __name__ == "__main__":
    main()
