import numpy as np
import scipy.optimize


def w1_lp_points(p, q, points):
    """W1 between discrete distributions on shared support points (any
    dimension) by solving the transport linear program explicitly."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if points.shape[0] != len(p):
        points = points.T
    n = points.shape[0]
    cost = np.linalg.norm(points[:, None, :] - points[None, :, :], axis=-1).ravel()
    a_eq = []
    for i in range(n):
        row = np.zeros((n, n))
        row[i, :] = 1.0
        a_eq.append(row.ravel())
    for j in range(n):
        col = np.zeros((n, n))
        col[:, j] = 1.0
        a_eq.append(col.ravel())
    res = scipy.optimize.linprog(
        cost,
        A_eq=np.array(a_eq),
        b_eq=np.concatenate([p, q]),
        bounds=(0, None),
        method="highs",
    )
    assert res.success, res.message
    return res.fun
