"""Writes life_tables.csv: relational-logit schedules q(x)/q(5) by family and level.

Each family is a perturbation of the Brass general standard at ages 1-5, shaped so
that North has the lowest infant-to-child ratio, East the highest, and South
elevated mortality at ages 1-4. Level k shifts the standard's logit by alpha_k.
"""
import math

STANDARD_L = {1: 0.8499, 2: 0.8070, 3: 0.7876, 5: 0.7691, 10: 0.7502, 15: 0.7362, 20: 0.7130}
SHIFT = {
    "north": {1: -0.10, 2: -0.04, 3: -0.01, 5: 0.0, 10: 0.0, 15: 0.0, 20: 0.0},
    "west": {1: 0.0, 2: 0.0, 3: 0.0, 5: 0.0, 10: 0.0, 15: 0.0, 20: 0.0},
    "south": {1: -0.04, 2: 0.00, 3: 0.02, 5: 0.04, 10: 0.04, 15: 0.04, 20: 0.04},
    "east": {1: 0.07, 2: 0.04, 3: 0.02, 5: 0.0, 10: -0.01, 15: -0.01, 20: -0.01},
}
LEVELS = 25


def ys(l):
    return 0.5 * math.log((1.0 - l) / l)


def main():
    rows = ["family,level,q5,x,q_x_over_q5"]
    for fam, shift in SHIFT.items():
        for k in range(1, LEVELS + 1):
            alpha = 0.9 - 0.11 * (k - 1)
            q = {}
            for x, l in STANDARD_L.items():
                y = ys(l) + shift[x] + alpha
                q[x] = 1.0 - 1.0 / (1.0 + math.exp(2.0 * y))
            for x in sorted(q):
                rows.append(f"{fam},{k},{q[5]:.8f},{x},{q[x] / q[5]:.8f}")
    with open("life_tables.csv", "w") as fh:
        fh.write("\n".join(rows) + "\n")


if __name__ == "__main__":
    main()
