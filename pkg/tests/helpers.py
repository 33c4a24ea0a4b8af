import numpy as np

from popdescent.individual import Batch, Individual, Population
from popdescent.localsearch import AnalyticModel
from popdescent.streams import ConstantStream

DUMMY = Batch(np.zeros((1, 1)), np.zeros(1, dtype=np.int64))


def constant_streams():
    return ConstantStream(DUMMY), ConstantStream(DUMMY)


def quadratic_population(thetas, lr=0.1, m=1, **alpha):
    members = [
        Individual(theta=np.array([t], dtype=np.float64), alpha={"learning_rate": lr, **alpha}, id=i)
        for i, t in enumerate(thetas)
    ]
    return Population(members, m)


def sphere(dim=1):
    return AnalyticModel("sphere", dim)


def random_individual(rng, n, idx, alpha=None):
    return Individual(
        theta=rng.normal(size=n),
        alpha=alpha or {"learning_rate": float(10 ** rng.uniform(-4, -1)), "regularization_rate": float(10 ** rng.uniform(-5, -1))},
        id=idx,
    )
