"""Independent reference computations shared by several test modules."""

import numpy as np
from numpy.polynomial import legendre as npleg


def saddle_point_oracle(omega, p, dp, alpha, nodes):
    """Dense mixed solve of the 1D ultraweak problem in independent bases.

    Fields are Legendre polynomials and tests are monomials, both in physical
    coordinates. Unknowns: fields (u, p) per element, then the traces
    (u_hat, p_hat) at every node; p_hat(0) = 1 is lifted and u_hat(L) is
    eliminated by the impedance relation u_hat = p_hat / Z with Z = 1.
    """
    r = p + dp
    ne = len(nodes) - 1
    xg, wg = npleg.leggauss(r + p + 4)
    n_test = 2 * (r + 1) * ne
    n_field = 2 * (p + 1) * ne
    n_tr = 2 * (ne + 1)                        # (u_hat, p_hat) per node
    G = np.zeros((n_test, n_test), complex)
    B = np.zeros((n_test, n_field + n_tr), complex)
    for e in range(ne):
        a, b = nodes[e], nodes[e + 1]
        z = 0.5 * (a + b) + 0.5 * (b - a) * xg
        w = 0.5 * (b - a) * wg
        s = (z - a) / (b - a)
        mono = np.stack([s**k for k in range(r + 1)])                       # (r+1, nq)
        dmono = np.stack([k * s ** max(k - 1, 0) / (b - a) for k in range(r + 1)])
        fld = np.stack([npleg.legval(2 * s - 1, np.eye(p + 1)[k]) for k in range(p + 1)])
        # test functions (v_i, 0) then (0, q_i); A*(v, q) = (-iw v - q', -iw q - v')
        zero = np.zeros_like(mono)
        vec = np.concatenate([-1j * omega * mono, -dmono])
        sca = np.concatenate([-dmono, -1j * omega * mono])
        val_v = np.concatenate([mono, zero])
        val_q = np.concatenate([zero, mono])
        g = (vec.conj() * w) @ vec.T + (sca.conj() * w) @ sca.T \
            + alpha * ((val_v * w) @ val_v.T + (val_q * w) @ val_q.T)
        ti = slice(2 * (r + 1) * e, 2 * (r + 1) * (e + 1))
        G[ti, ti] = g
        fi = 2 * (p + 1) * e
        B[ti, fi:fi + p + 1] = (vec.conj() * w) @ fld.T                     # u
        B[ti, fi + p + 1:fi + 2 * p + 2] = (sca.conj() * w) @ fld.T         # p
        # boundary terms p_hat v n + u_hat q n at both ends
        for node, sval, n in ((e, 0.0, -1.0), (e + 1, 1.0, 1.0)):
            tv = np.array([sval**k for k in range(r + 1)])
            col = n_field + 2 * node
            B[ti, col + 1] += n * np.concatenate([tv, np.zeros(r + 1)])     # p_hat with v
            B[ti, col] += n * np.concatenate([np.zeros(r + 1), tv])         # u_hat with q
    # boundary conditions
    pin, uout, pout = n_field + 1, n_field + 2 * ne, n_field + 2 * ne + 1
    B[:, pout] += B[:, uout]
    lvec = -B[:, pin] * 1.0
    keep = [c for c in range(n_field + n_tr) if c not in (pin, uout)]
    Bk = B[:, keep]
    m = Bk.shape[1]
    K = np.block([[G, Bk], [Bk.conj().T, np.zeros((m, m))]])
    rhs = np.concatenate([lvec, np.zeros(m)])
    x = np.linalg.solve(K, rhs)[n_test:]
    coeffs = x[:n_field]

    def evaluate(zq):
        e = min(np.searchsorted(nodes, zq, side="right") - 1, ne - 1)
        a, b = nodes[e], nodes[e + 1]
        s = (zq - a) / (b - a)
        c = coeffs[2 * (p + 1) * e:2 * (p + 1) * (e + 1)]
        return (npleg.legval(2 * s - 1, c[:p + 1]), npleg.legval(2 * s - 1, c[p + 1:]))
    return evaluate
