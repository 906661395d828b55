"""Recompute the frozen values in ``oracles.py`` with mpmath at 40 digits.

Independent of the package: only the closed forms are used.  Run as a
script; the test suite does not import it.
"""
import mpmath as mp

mp.mp.dps = 40

MU, SIGMA, R = mp.mpf("0.508378"), mp.sqrt(2), mp.mpf("0.00520074")


def gammas(mu, sigma, r):
    a = sigma**2 / 2
    disc = mp.sqrt(mu**2 + 4 * a * r)
    return (-mu + disc) / (2 * a), (-mu - disc) / (2 * a)


GP, GM = gammas(MU, SIGMA, R)


def phi(x, k=0):
    return GP ** (k - 1) * mp.e ** (GP * x) - GM ** (k - 1) * mp.e ** (GM * x)


def eta(x):
    return 1 - 1 / x


def residual(b):
    return eta(b) * phi(b, 2) / phi(b, 1) - 1 / b**2


def barrier(b):
    A = eta(b) / phi(b, 1)
    return A, A * phi(b)


def band(b, guess):
    A, B = barrier(b)

    def eqs(C1, C2, D, th, la):
        h = lambda x, k: C1 * GP**k * mp.e ** (GP * x) + C2 * GM**k * mp.e ** (GM * x)
        return [h(th, 0) - (B + th - b - mp.log(th / b)), h(th, 1) - eta(th),
                h(la, 0) - D, h(la, 1) - eta(la), h(la, 2) - 1 / la**2]

    return mp.findroot(eqs, guess)


def main():
    roots = [mp.findroot(residual, (lo, hi), solver="bisect") for lo, hi in ((4, 5), (5.5, 6), (7.5, 8.5))]
    b1 = roots[0]
    C1, C2, D, th, la = band(b1, (81.7, 1.587, 88.5, 4.8489, 7.9502))
    A, B = barrier(b1)

    def vb(x):
        return A * phi(x) if x < b1 else B + x - b1 - mp.log(x / b1)

    def vstar(x):
        if x <= th:
            return vb(x)
        if x <= la:
            return C1 * mp.e ** (GP * x) + C2 * mp.e ** (GM * x)
        return D + x - la - mp.log(x / la)

    g0p, g0m = gammas(mp.mpf(0), SIGMA, mp.mpf("0.04"))
    # no reflection: gamma_plus * (1 - 1/b) = 1/b^2  ->  gamma_plus b^2 - gamma_plus b - 1 = 0
    nr = (g0p + mp.sqrt(g0p**2 + 4 * g0p)) / (2 * g0p)
    out = {
        "GAMMA_PLUS": GP, "GAMMA_MINUS": GM,
        "ROOTS": roots, "THETA": th, "LAMBDA": la, "C1": C1, "C2": C2, "D": D, "A": A, "B": B,
        "V_B1": {x: vb(mp.mpf(x)) for x in (2, 5, 9)},
        "V_STAR": {x: vstar(mp.mpf(x)) for x in (2, 5, 9)},
        "NO_REFLECTION_DRIFTLESS": nr,
    }
    for k, v in out.items():
        if isinstance(v, dict):
            print(k, {x: mp.nstr(y, 17) for x, y in v.items()})
        elif isinstance(v, list):
            print(k, [mp.nstr(y, 17) for y in v])
        else:
            print(k, mp.nstr(v, 17))


if __name__ == "__main__":
    main()
