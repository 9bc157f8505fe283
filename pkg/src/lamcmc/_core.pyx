# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: exact kd-tree kNN, pivoted-QR local fits, chain drivers.

Semantics mirror lamcmc._pure and the Python step loop in lamcmc.chain; the
drivers advance the same numpy Generator through its C interface, so RNG
consumption matches the Python implementation draw for draw.
"""

import numpy as np

cimport numpy as cnp
from cpython.pycapsule cimport PyCapsule_GetPointer
from libc.math cimport INFINITY, NAN, exp, fabs, floor, isfinite, log, pow, sin, sqrt
from numpy.random cimport bitgen_t
from numpy.random.c_distributions cimport random_standard_normal
from scipy.linalg.cython_lapack cimport dgeqp3, dormqr, dpotrf, dtrtrs

from .errors import DegenerateGeometryError, InsufficientPointsError

cnp.import_array()

DEF LEAF_SIZE = 16

cdef double EPS = 2.220446049250313e-16
cdef double EXP_CAP = 700.0
# condition ceiling treated as rank deficiency; matches lamcmc._pure.COND_MAX
cdef double COND_MAX = 1e12


# ---------------------------------------------------------------------------
# point index: incrementally grown kd-tree with brute-force pending region
# ---------------------------------------------------------------------------

cdef inline bint _worse(double d1, cnp.int64_t i1, double d2, cnp.int64_t i2) nogil:
    # lexicographic (distance, insertion index): larger sorts later
    return d1 > d2 or (d1 == d2 and i1 > i2)


cdef class PointIndex:
    """Growable exact-kNN index: static kd-tree over a prefix of the points
    plus an exhaustively scanned pending tail, rebuilt as the tail grows.
    Sets smaller than 64 points are searched exhaustively."""

    cdef readonly Py_ssize_t dim
    cdef readonly Py_ssize_t n
    cdef object _arr
    cdef double[:, ::1] pts
    cdef Py_ssize_t cap
    # tree over pts[perm[0:n_tree]]
    cdef Py_ssize_t n_tree
    cdef object _perm_arr
    cdef cnp.int64_t[::1] perm
    cdef object _nodes_arr
    cdef cnp.int32_t[::1] node_axis, node_left, node_right
    cdef cnp.int64_t[::1] node_start, node_end
    cdef double[::1] node_split
    cdef object _na, _nl, _nr, _ns, _ne, _nv
    cdef int n_nodes, root

    def __init__(self, Py_ssize_t dim):
        if dim < 1:
            raise ValueError(f"dim must be >= 1, got {dim}")
        self.dim = dim
        self.cap = 64
        self._arr = np.empty((self.cap, dim))
        self.pts = self._arr
        self.n = 0
        self.n_tree = 0
        self.n_nodes = 0
        self.root = -1

    def points_view(self):
        return self._arr[: self.n]

    def append(self, x):
        cdef cnp.ndarray[cnp.float64_t, ndim=1] xv = np.ascontiguousarray(x, dtype=np.float64)
        if xv.shape[0] != self.dim:
            raise ValueError(f"point has {xv.shape[0]} coordinates, expected {self.dim}")
        cdef Py_ssize_t i
        if self.n == self.cap:
            self.cap *= 2
            grown = np.empty((self.cap, self.dim))
            grown[: self.n] = self._arr[: self.n]
            self._arr = grown
            self.pts = self._arr
        for i in range(self.dim):
            self.pts[self.n, i] = xv[i]
        self.n += 1
        # Inserts are rare relative to queries (only on refinement), so keep
        # the brute-scanned pending region tiny and rebuild often.
        cdef Py_ssize_t pending = self.n - self.n_tree
        if self.n >= 64 and pending > max(8, self.n_tree // 64):
            self._rebuild()
        return self.n - 1

    # -- tree construction ---------------------------------------------------

    cdef void _ensure_nodes(self, int needed):
        cdef int cap = self.node_axis.shape[0] if self.n_nodes > 0 else 0
        if self._na is None or needed > cap:
            newcap = max(needed * 2, 256)
            na = np.full(newcap, -1, dtype=np.int32)
            nl = np.full(newcap, -1, dtype=np.int32)
            nr = np.full(newcap, -1, dtype=np.int32)
            ns = np.zeros(newcap, dtype=np.int64)
            ne = np.zeros(newcap, dtype=np.int64)
            nv = np.zeros(newcap)
            if self._na is not None and self.n_nodes > 0:
                na[: self.n_nodes] = self._na[: self.n_nodes]
                nl[: self.n_nodes] = self._nl[: self.n_nodes]
                nr[: self.n_nodes] = self._nr[: self.n_nodes]
                ns[: self.n_nodes] = self._ns[: self.n_nodes]
                ne[: self.n_nodes] = self._ne[: self.n_nodes]
                nv[: self.n_nodes] = self._nv[: self.n_nodes]
            self._na, self._nl, self._nr, self._ns, self._ne, self._nv = na, nl, nr, ns, ne, nv
            self.node_axis, self.node_left, self.node_right = na, nl, nr
            self.node_start, self.node_end = ns, ne
            self.node_split = nv

    cdef void _rebuild(self):
        cdef Py_ssize_t i
        self._perm_arr = np.arange(self.n, dtype=np.int64)
        self.perm = self._perm_arr
        self.n_nodes = 0
        self._na = None
        self._ensure_nodes(2 * <int> (self.n // LEAF_SIZE + 2))
        self.root = self._build(0, self.n)
        self.n_tree = self.n

    cdef int _build(self, Py_ssize_t start, Py_ssize_t end):
        self._ensure_nodes(self.n_nodes + 1)
        cdef int node = self.n_nodes
        self.n_nodes += 1
        cdef Py_ssize_t count = end - start
        cdef int axis
        cdef Py_ssize_t i, mid
        cdef double lo, hi, v, best_spread, spread
        if count <= LEAF_SIZE:
            self.node_axis[node] = -1
            self.node_start[node] = start
            self.node_end[node] = end
            return node
        # widest-spread split axis
        axis = 0
        best_spread = -1.0
        for a in range(self.dim):
            lo = self.pts[self.perm[start], a]
            hi = lo
            for i in range(start + 1, end):
                v = self.pts[self.perm[i], a]
                if v < lo:
                    lo = v
                elif v > hi:
                    hi = v
            spread = hi - lo
            if spread > best_spread:
                best_spread = spread
                axis = a
        mid = start + count // 2
        self._select(start, end, mid, axis)
        self.node_axis[node] = axis
        self.node_split[node] = self.pts[self.perm[mid], axis]
        cdef int left = self._build(start, mid)
        cdef int right = self._build(mid, end)
        self.node_left[node] = left
        self.node_right[node] = right
        return node

    cdef void _select(self, Py_ssize_t start, Py_ssize_t end, Py_ssize_t target, int axis):
        # partial quickselect: perm[target] gets its order statistic by
        # coordinate along `axis`, smaller keys left, larger right
        cdef Py_ssize_t lo = start, hi = end - 1, i, j, mid
        cdef double pivot, tmpd
        cdef cnp.int64_t tmp
        while hi > lo:
            if hi - lo < 8:
                for i in range(lo + 1, hi + 1):
                    j = i
                    tmp = self.perm[i]
                    tmpd = self.pts[tmp, axis]
                    while j > lo and self.pts[self.perm[j - 1], axis] > tmpd:
                        self.perm[j] = self.perm[j - 1]
                        j -= 1
                    self.perm[j] = tmp
                return
            mid = lo + (hi - lo) // 2
            # median-of-three pivot, moved to lo
            if self.pts[self.perm[mid], axis] < self.pts[self.perm[lo], axis]:
                tmp = self.perm[mid]; self.perm[mid] = self.perm[lo]; self.perm[lo] = tmp
            if self.pts[self.perm[hi], axis] < self.pts[self.perm[lo], axis]:
                tmp = self.perm[hi]; self.perm[hi] = self.perm[lo]; self.perm[lo] = tmp
            if self.pts[self.perm[mid], axis] < self.pts[self.perm[hi], axis]:
                tmp = self.perm[mid]; self.perm[mid] = self.perm[hi]; self.perm[hi] = tmp
            pivot = self.pts[self.perm[hi], axis]
            i = lo
            for j in range(lo, hi):
                if self.pts[self.perm[j], axis] < pivot:
                    tmp = self.perm[i]; self.perm[i] = self.perm[j]; self.perm[j] = tmp
                    i += 1
            tmp = self.perm[i]; self.perm[i] = self.perm[hi]; self.perm[hi] = tmp
            if i == target:
                return
            elif i < target:
                lo = i + 1
            else:
                hi = i - 1

    # -- queries ---------------------------------------------------------------

    cdef inline double _dist2(self, double* x, Py_ssize_t row) nogil:
        cdef double acc = 0.0, diff
        cdef Py_ssize_t m
        for m in range(self.dim):
            diff = x[m] - self.pts[row, m]
            acc += diff * diff
        return acc

    cdef inline void _consider(self, double* x, Py_ssize_t row, double* hd2,
                               cnp.int64_t* hidx, Py_ssize_t k, Py_ssize_t* size) nogil:
        cdef double d2 = self._dist2(x, row)
        cdef Py_ssize_t pos, child, left, right
        cdef double td
        cdef cnp.int64_t ti
        if size[0] < k:
            pos = size[0]
            hd2[pos] = d2
            hidx[pos] = row
            size[0] += 1
            # sift up (max-heap on lexicographic order)
            while pos > 0:
                if _worse(hd2[pos], hidx[pos], hd2[(pos - 1) // 2], hidx[(pos - 1) // 2]):
                    td = hd2[pos]; hd2[pos] = hd2[(pos - 1) // 2]; hd2[(pos - 1) // 2] = td
                    ti = hidx[pos]; hidx[pos] = hidx[(pos - 1) // 2]; hidx[(pos - 1) // 2] = ti
                    pos = (pos - 1) // 2
                else:
                    break
            return
        if not _worse(hd2[0], hidx[0], d2, <cnp.int64_t> row):
            return
        hd2[0] = d2
        hidx[0] = row
        pos = 0
        while True:
            left = 2 * pos + 1
            right = left + 1
            child = pos
            if left < k and _worse(hd2[left], hidx[left], hd2[child], hidx[child]):
                child = left
            if right < k and _worse(hd2[right], hidx[right], hd2[child], hidx[child]):
                child = right
            if child == pos:
                break
            td = hd2[pos]; hd2[pos] = hd2[child]; hd2[child] = td
            ti = hidx[pos]; hidx[pos] = hidx[child]; hidx[child] = ti
            pos = child

    cdef void _query_node(self, int node, double* x, double* hd2, cnp.int64_t* hidx,
                          Py_ssize_t k, Py_ssize_t* size) nogil:
        cdef int axis = self.node_axis[node]
        cdef Py_ssize_t i
        cdef double diff
        cdef int near, far
        if axis < 0:
            for i in range(self.node_start[node], self.node_end[node]):
                self._consider(x, self.perm[i], hd2, hidx, k, size)
            return
        diff = x[axis] - self.node_split[node]
        if diff < 0:
            near = self.node_left[node]
            far = self.node_right[node]
        else:
            near = self.node_right[node]
            far = self.node_left[node]
        self._query_node(near, x, hd2, hidx, k, size)
        if size[0] < k or diff * diff <= hd2[0]:
            self._query_node(far, x, hd2, hidx, k, size)

    cdef int query_c(self, double* x, Py_ssize_t k, cnp.int64_t* oidx, double* od2) nogil:
        # fills oidx/od2 sorted ascending by (distance, index); returns 0 or -1
        cdef Py_ssize_t size = 0, i, j
        cdef double td
        cdef cnp.int64_t ti
        if k < 1 or k > self.n:
            return -1
        if self.root >= 0 and self.n_tree > 0:
            self._query_node(self.root, x, od2, oidx, k, &size)
        for i in range(self.n_tree, self.n):
            self._consider(x, i, od2, oidx, k, &size)
        # insertion sort ascending
        for i in range(1, k):
            td = od2[i]
            ti = oidx[i]
            j = i
            while j > 0 and _worse(od2[j - 1], oidx[j - 1], td, ti):
                od2[j] = od2[j - 1]
                oidx[j] = oidx[j - 1]
                j -= 1
            od2[j] = td
            oidx[j] = ti
        return 0

    def query(self, x, Py_ssize_t k):
        """k nearest stored points; ties broken toward lower insertion index."""
        cdef cnp.ndarray[cnp.float64_t, ndim=1] xv = np.ascontiguousarray(x, dtype=np.float64)
        if xv.shape[0] != self.dim:
            raise ValueError(f"query point has {xv.shape[0]} coordinates, expected {self.dim}")
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        if k > self.n:
            raise InsufficientPointsError(
                f"query asked for k={k} neighbors but only {self.n} points are stored"
            )
        cdef cnp.ndarray[cnp.int64_t, ndim=1] idx = np.empty(k, dtype=np.int64)
        cdef cnp.ndarray[cnp.float64_t, ndim=1] d2 = np.empty(k)
        self.query_c(&xv[0], k, <cnp.int64_t*> idx.data, <double*> d2.data)
        return idx, np.sqrt(d2)


# ---------------------------------------------------------------------------
# local polynomial fit: column-pivoted QR via LAPACK
# ---------------------------------------------------------------------------

cdef class _FitWorkspace:
    cdef object _v, _rhs, _tau, _work, _jpvt, _pows, _coef
    cdef double[::1, :] V
    cdef double[::1] rhs, tau, work, pows, coef
    cdef int[::1] jpvt
    cdef int lwork, kmax, q, d, pmax

    def __init__(self, int kmax, int q, int d, int pmax):
        self.kmax = kmax
        self.q = q
        self.d = d
        self.pmax = pmax
        self._v = np.empty((kmax, q), order="F")
        self.V = self._v
        self._rhs = np.empty(kmax)
        self.rhs = self._rhs
        self._tau = np.empty(q)
        self.tau = self._tau
        self._jpvt = np.zeros(q, dtype=np.int32)
        self.jpvt = self._jpvt
        self._pows = np.empty(d * (pmax + 1))
        self.pows = self._pows
        self._coef = np.empty(q)
        self.coef = self._coef
        # workspace query
        cdef int m = kmax, n = q, info = 0, lq = -1, one = 1
        cdef double wq = 0.0
        dgeqp3(&m, &n, &self.V[0, 0], &m, &self.jpvt[0], &self.tau[0], &wq, &lq, &info)
        cdef int l1 = <int> wq
        lq = -1
        dormqr("L", "T", &m, &one, &n, &self.V[0, 0], &m, &self.tau[0],
               &self.rhs[0], &m, &wq, &lq, &info)
        cdef int l2 = <int> wq
        self.lwork = max(l1, l2, 3 * q + 1)
        self._work = np.empty(self.lwork)
        self.work = self._work


cdef int _fit_c(_FitWorkspace W, double[:, ::1] pts, double[::1] values,
                cnp.int64_t* nidx, int k, double* center, double scale,
                const cnp.int32_t[:, ::1] expon, double* out_cond) nogil:
    """Build the local Vandermonde and solve; coefficients land in W.coef.

    Returns 0 on success, -1 on rank deficiency (out_cond still set)."""
    cdef int q = expon.shape[0]
    cdef int d = expon.shape[1]
    cdef int i, j, m, a, info = 0, one = 1
    cdef Py_ssize_t row
    cdef double z, v, rmax, rmin, rd
    for i in range(k):
        row = nidx[i]
        for m in range(d):
            z = (pts[row, m] - center[m]) / scale
            W.pows[m * (W.pmax + 1)] = 1.0
            for a in range(1, W.pmax + 1):
                W.pows[m * (W.pmax + 1) + a] = W.pows[m * (W.pmax + 1) + a - 1] * z
        for j in range(q):
            v = 1.0
            for m in range(d):
                v *= W.pows[m * (W.pmax + 1) + expon[j, m]]
            W.V[i, j] = v
        W.rhs[i] = values[row]
    for j in range(q):
        W.jpvt[j] = 0
    dgeqp3(&k, &q, &W.V[0, 0], &W.kmax, &W.jpvt[0], &W.tau[0], &W.work[0], &W.lwork, &info)
    if info != 0:
        out_cond[0] = INFINITY
        return -1
    rmax = 0.0
    rmin = INFINITY
    for j in range(q):
        rd = fabs(W.V[j, j])
        if rd > rmax:
            rmax = rd
        if rd < rmin:
            rmin = rd
    if rmax == 0.0 or rmin <= rmax / COND_MAX:
        out_cond[0] = INFINITY if rmin == 0.0 else rmax / rmin
        return -1
    out_cond[0] = rmax / rmin
    dormqr("L", "T", &k, &one, &q, &W.V[0, 0], &W.kmax, &W.tau[0],
           &W.rhs[0], &W.kmax, &W.work[0], &W.lwork, &info)
    dtrtrs("U", "N", "N", &q, &one, &W.V[0, 0], &W.kmax, &W.rhs[0], &W.kmax, &info)
    if info != 0:
        out_cond[0] = INFINITY
        return -1
    for j in range(q):
        W.coef[W.jpvt[j] - 1] = W.rhs[j]
    return 0


def fit_coefficients(pts, values, center, double scale, expon):
    """Fit coefficients + condition estimate (test hook for the C kernel)."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2] P = np.ascontiguousarray(pts, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] g = np.ascontiguousarray(values, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] c = np.ascontiguousarray(center, dtype=np.float64)
    cdef cnp.ndarray[cnp.int32_t, ndim=2] E = np.ascontiguousarray(np.asarray(expon), dtype=np.int32)
    cdef int k = P.shape[0]
    cdef int q = E.shape[0]
    cdef int pmax = int(np.max(E)) if E.size else 0
    if k < q:
        raise InsufficientPointsError(f"need at least q={q} rows, got k={k}")
    W = _FitWorkspace(k, q, E.shape[1], pmax)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] nidx = np.arange(k, dtype=np.int64)
    cdef double cond = 0.0
    cdef double[:, ::1] Pv = P
    cdef double[::1] gv = g
    cdef int rc = _fit_c(W, Pv, gv, <cnp.int64_t*> nidx.data, k, &c[0], scale, E, &cond)
    if rc != 0:
        raise DegenerateGeometryError(
            f"rank-deficient local system (k={k}, q={q})", condition_estimate=cond
        )
    return np.asarray(W._coef).copy(), cond


# ---------------------------------------------------------------------------
# shared driver helpers
# ---------------------------------------------------------------------------

cdef inline double _lyapunov(double* x, double[::1] xbar, double nu0, double nu1,
                             Py_ssize_t d) nogil:
    cdef double acc = 0.0, diff, arg
    cdef Py_ssize_t m
    for m in range(d):
        diff = x[m] - xbar[m]
        acc += diff * diff
    if acc == 0.0:
        return 1.0
    arg = nu0 * pow(sqrt(acc), nu1)
    if arg > EXP_CAP:
        arg = EXP_CAP
    return exp(arg)


cdef inline double _gauss_quad(double* x, double[::1] mean, double[:, ::1] prec,
                               Py_ssize_t d) nogil:
    cdef double acc = 0.0, ri
    cdef Py_ssize_t i, j
    for i in range(d):
        ri = 0.0
        for j in range(d):
            ri += prec[i, j] * (x[j] - mean[j])
        acc += (x[i] - mean[i]) * ri
    return -0.5 * acc


cdef bitgen_t* _bitgen(object rng):
    capsule = rng.bit_generator.capsule
    return <bitgen_t*> PyCapsule_GetPointer(capsule, "BitGenerator")


cdef void _am_update(double[::1] am_mean, double[:, ::1] am_sq, long* am_count,
                     double[:, ::1] chol, double* x, long t,
                     double scale, double eps, long start, long freeze,
                     Py_ssize_t d, double* scratch):
    cdef Py_ssize_t i, j
    cdef double delta_i
    cdef int nd = <int> d, info = 0
    if freeze > 0 and t >= freeze:
        return
    am_count[0] += 1
    for i in range(d):
        scratch[i] = x[i] - am_mean[i]          # pre-update deviation
        am_mean[i] += scratch[i] / am_count[0]
    for i in range(d):
        delta_i = scratch[i]
        for j in range(d):
            am_sq[i, j] += delta_i * (x[j] - am_mean[j])
    if t >= start and am_count[0] >= 2:
        for i in range(d):
            for j in range(d):
                chol[i, j] = scale * am_sq[i, j] / (am_count[0] - 1)
            chol[i, i] += eps
        # row-major lower factor == LAPACK 'U' on the same buffer
        dpotrf("U", &nd, &chol[0, 0], &nd, &info)
        # on failure the old factor stays usable; skip silently
        if info != 0:
            pass


# ---------------------------------------------------------------------------
# LA-MCMC driver
# ---------------------------------------------------------------------------


def run_la_chunk(
    PointIndex index,
    object values_getter,
    object refine_cb,
    object degen_cb,
    object pois_cb,
    object rng,
    const cnp.int32_t[:, ::1] expon,
    int k,
    int degree,
    # schedule
    double gamma0, double gamma1, double tau0, double eta,
    double nu0, double nu1, double[::1] xbar, double lambda_bar,
    # exact addend (likelihood-mode prior): 0 none, 1 gaussian
    int addend_code, double[::1] add_mean, double[:, ::1] add_prec,
    # proposal
    int prop_kind, double[:, ::1] prop_chol,
    double am_scale, double am_eps, long am_start, long am_freeze,
    double[::1] am_mean, double[:, ::1] am_sq, long am_count,
    # chain state
    double[::1] x, long t0, long level0, double lhat0, int lhat_valid,
    long n_accept, long n_refine, long n_refine_pois, long n_nonfinite,
    # outputs (absolute step indexing)
    double[:, ::1] samples,
    cnp.uint8_t[::1] tr_acc, cnp.uint8_t[::1] tr_ref,
    double[::1] tr_delta, double[::1] tr_gamma,
    cnp.int64_t[::1] tr_level, cnp.int64_t[::1] tr_nref,
    long nsteps,
):
    """Advance the LA chain ``nsteps`` steps; returns updated state scalars.

    Mutates x, samples, trace arrays, the proposal state, and (via the
    refinement callbacks) the evaluated set.
    """
    cdef bitgen_t* bg = _bitgen(rng)
    cdef Py_ssize_t d = x.shape[0]
    cdef int q = expon.shape[0]
    cdef int pmax = degree
    cdef double pexp = degree + 1.0
    cdef double inv2g = 1.0 / (2.0 * gamma1)

    W = _FitWorkspace(k, q, <int> d, pmax)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] zbuf = np.empty(d)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] xp = np.empty(d)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] idxbuf = np.empty(k, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] d2buf = np.empty(k)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] scratch = np.empty(d)
    cdef double[::1] zv = zbuf, xpv = xp, scr = scratch
    cdef cnp.int64_t* ib = <cnp.int64_t*> idxbuf.data
    cdef double* db = <double*> d2buf.data

    cdef double[::1] values = values_getter()

    cdef long t = t0, level = level0, target_level, step
    cdef double lhat_x = lhat0
    cdef int have_lhat = lhat_valid
    cdef bint refined, trigger, accepted
    cdef double delta, vx, vxp, gamma_x, gamma_xp, indicator, lhat_xp
    cdef double qv, logratio, u, cond, lam2, addend_diff
    cdef Py_ssize_t i, j
    cdef int rc
    cdef object res

    for step in range(nsteps):
        t += 1

        # 1. proposal draw (d normals)
        for i in range(d):
            zv[i] = random_standard_normal(bg)
        for i in range(d):
            u = 0.0
            for j in range(i + 1):
                u += prop_chol[i, j] * zv[j]
            xpv[i] = x[i] + u

        # 2. level advances at most once per step
        target_level = <long> floor(pow(t / tau0, inv2g))
        if target_level > level:
            level += 1

        # 3. refinement check at the current point
        index.query_c(&x[0], k, ib, db)
        delta = sqrt(db[k - 1])
        vx = _lyapunov(&x[0], xbar, nu0, nu1, d)
        gamma_x = gamma0 * pow(<double> max(level, 1), -gamma1) * vx
        indicator = pow(delta, pexp)
        trigger = indicator > gamma_x
        refined = False
        if not trigger and isfinite(lambda_bar):
            lam2 = pois_cb(np.asarray(x).copy())
            if lam2 > lambda_bar:
                trigger = True
                n_refine_pois += 1
        if trigger:
            refine_cb(np.asarray(x).copy())
            values = values_getter()
            n_refine += 1
            refined = True
            have_lhat = 0

        # 4. surrogate at the current point (cached between steps)
        if not have_lhat:
            index.query_c(&x[0], k, ib, db)
            rc = _fit_c(W, index.pts, values, ib, k, &x[0],
                        sqrt(db[k - 1]) if db[k - 1] > 0.0 else 1.0, expon, &cond)
            if rc != 0:
                res = degen_cb(np.asarray(x).copy())
                lhat_x = res[0]
                n_refine += res[1]
                values = values_getter()
            else:
                lhat_x = W.coef[0]
            have_lhat = 1

        # 5. surrogate at the proposal
        if index.query_c(&xpv[0], k, ib, db) == 0:
            rc = _fit_c(W, index.pts, values, ib, k, &xpv[0],
                        sqrt(db[k - 1]) if db[k - 1] > 0.0 else 1.0, expon, &cond)
            lhat_xp = W.coef[0] if rc == 0 else NAN
        else:
            lhat_xp = NAN

        # 6. threshold at the proposal and tail correction
        vxp = _lyapunov(&xpv[0], xbar, nu0, nu1, d)
        gamma_xp = gamma0 * pow(<double> max(level, 1), -gamma1) * vxp
        if eta == 0.0:
            qv = 0.0
        elif vxp < vx:
            qv = eta * (gamma_xp + gamma_x)
        else:
            qv = -eta * (gamma_xp + gamma_x)

        logratio = (lhat_xp + qv) - lhat_x
        if addend_code == 1:
            logratio += _gauss_quad(&xpv[0], add_mean, add_prec, d) - \
                _gauss_quad(&x[0], add_mean, add_prec, d)

        # 7. accept/reject (uniform always consumed)
        u = bg.next_double(bg.state)
        if not isfinite(lhat_xp):
            n_nonfinite += 1
            accepted = False
        else:
            accepted = log(u) < logratio

        if accepted:
            for i in range(d):
                x[i] = xpv[i]
            lhat_x = lhat_xp
            n_accept += 1

        # 8. proposal adaptation
        if prop_kind == 1:
            _am_update(am_mean, am_sq, &am_count, prop_chol, &x[0], t,
                       am_scale, am_eps, am_start, am_freeze, d, &scr[0])

        # 9. record
        for i in range(d):
            samples[t - 1, i] = x[i]
        tr_acc[t - 1] = 1 if accepted else 0
        tr_ref[t - 1] = 1 if refined else 0
        tr_delta[t - 1] = delta
        tr_gamma[t - 1] = gamma_x
        tr_level[t - 1] = level
        tr_nref[t - 1] = n_refine

    return t, level, lhat_x, have_lhat, n_accept, n_refine, n_refine_pois, n_nonfinite, am_count


# ---------------------------------------------------------------------------
# exact-evaluation baseline driver
# ---------------------------------------------------------------------------

TARGET_CODES = {"toy1d": 1, "banana": 2, "gaussian": 3}

cdef double PI4 = 12.566370614359172  # 4 * pi


def run_exact_chunk(
    object rng,
    int target_code, object target_cb,
    double[::1] g_mean, double[:, ::1] g_prec,
    int addend_code, double[::1] add_mean, double[:, ::1] add_prec,
    int prop_kind, double[:, ::1] prop_chol,
    double am_scale, double am_eps, long am_start, long am_freeze,
    double[::1] am_mean, double[:, ::1] am_sq, long am_count,
    double[::1] x, long t0, double lp0, long n_accept,
    double[:, ::1] samples, cnp.uint8_t[::1] tr_acc,
    long nsteps,
):
    """Advance the exact Metropolis-Hastings chain; returns state scalars.

    For builtin targets the log-density is evaluated in C and the number of
    evaluations is returned for the caller to fold into the model counter.
    """
    cdef bitgen_t* bg = _bitgen(rng)
    cdef Py_ssize_t d = x.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] zbuf = np.empty(d)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] xp = np.empty(d)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] scratch = np.empty(d)
    cdef double[::1] zv = zbuf, xpv = xp, scr = scratch

    cdef long t = t0, step, n_eval_c = 0
    cdef double lp_x = lp0, lp_xp, u, acc, r
    cdef bint accepted
    cdef Py_ssize_t i, j

    for step in range(nsteps):
        t += 1
        for i in range(d):
            zv[i] = random_standard_normal(bg)
        for i in range(d):
            u = 0.0
            for j in range(i + 1):
                u += prop_chol[i, j] * zv[j]
            xpv[i] = x[i] + u

        if target_code == 1:
            lp_xp = -0.5 * xpv[0] * xpv[0] + sin(PI4 * xpv[0])
            n_eval_c += 1
        elif target_code == 2:
            r = xpv[1] - 5.0 * xpv[0] * xpv[0]
            lp_xp = -xpv[0] * xpv[0] - r * r
            n_eval_c += 1
        elif target_code == 3:
            lp_xp = _gauss_quad(&xpv[0], g_mean, g_prec, d)
            n_eval_c += 1
        else:
            lp_xp = target_cb(np.asarray(xpv).copy())
        if addend_code == 1:
            lp_xp += _gauss_quad(&xpv[0], add_mean, add_prec, d)

        u = bg.next_double(bg.state)
        accepted = log(u) < (lp_xp - lp_x)
        if accepted:
            for i in range(d):
                x[i] = xpv[i]
            lp_x = lp_xp
            n_accept += 1

        if prop_kind == 1:
            _am_update(am_mean, am_sq, &am_count, prop_chol, &x[0], t,
                       am_scale, am_eps, am_start, am_freeze, d, &scr[0])

        for i in range(d):
            samples[t - 1, i] = x[i]
        tr_acc[t - 1] = 1 if accepted else 0

    return t, lp_x, n_accept, n_eval_c, am_count
