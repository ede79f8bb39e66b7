# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled Q15 kernels.  Semantics match ``_q15py`` bit for bit."""
from libc.math cimport tanh, exp, fabs

cdef enum:
    ACC_CLIP = 2097151


cdef inline int aw(int x, unsigned char c) noexcept nogil:
    cdef int y
    if c == 7:
        return 0
    y = x >> (c & 3)
    if c & 4:
        return -y
    return y


cdef inline int clip_acc(int x) noexcept nogil:
    if x > ACC_CLIP:
        return ACC_CLIP
    if x < -ACC_CLIP:
        return -ACC_CLIP
    return x


cdef inline int ss(int x) noexcept nogil:
    cdef int ax = -x if x < 0 else x
    return (x * 1024) / ((ax + 32768) >> 5)


cdef inline int sat16(int x) noexcept nogil:
    if x > 32767:
        return 32767
    if x < -32768:
        return -32768
    return x


def _split_codes(codes):
    """Per-weight shift amount and sign (-1, 0, +1) for branch-free accumulation."""
    import numpy as np
    c = np.asarray(codes, dtype=np.int32)
    shift = np.ascontiguousarray(np.where(c == 7, 0, c & 3), dtype=np.int32)
    sign = np.ascontiguousarray(np.where(c == 7, 0, np.where(c & 4, -1, 1)), dtype=np.int32)
    return shift, sign


cdef inline int dot_shift(const int* v, const int* sh, const int* sg, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i
    cdef int acc = 0
    for i in range(n):
        acc += sg[i] * (v[i] >> sh[i])
    return acc


def egru_layer(const short[:, :, ::1] x,
               const unsigned char[:, ::1] wz, const int[::1] bz,
               const unsigned char[:, ::1] wh, const int[::1] bh,
               const short[:, ::1] h0, short[:, :, ::1] out):
    """Run an eGRU layer over (batch, time, inputs); writes (batch, time, hidden)."""
    import numpy as np
    cdef Py_ssize_t B = x.shape[0], T = x.shape[1], N = x.shape[2]
    cdef Py_ssize_t H = wz.shape[0], K = H + N
    cdef Py_ssize_t b, t, i, j
    cdef int az, ah, z, ht, hp
    zs, zg = _split_codes(wz)
    hs, hg = _split_codes(wh)
    cdef const int[:, ::1] zsh = zs
    cdef const int[:, ::1] zsg = zg
    cdef const int[:, ::1] hsh = hs
    cdef const int[:, ::1] hsg = hg
    cdef int[::1] v = np.empty(K, dtype=np.int32)
    cdef int[::1] hn = np.empty(H, dtype=np.int32)
    with nogil:
        for b in range(B):
            for j in range(H):
                v[j] = h0[b, j]
            for t in range(T):
                for i in range(N):
                    v[H + i] = x[b, t, i]
                for j in range(H):
                    az = bz[j] + dot_shift(&v[0], &zsh[j, 0], &zsg[j, 0], K)
                    ah = bh[j] + dot_shift(&v[0], &hsh[j, 0], &hsg[j, 0], K)
                    z = (ss(clip_acc(az)) + 32768) >> 1
                    ht = ss(clip_acc(ah))
                    hp = v[j]
                    hn[j] = sat16(hp + ((z * (ht - hp)) >> 15))
                for j in range(H):
                    v[j] = hn[j]
                    out[b, t, j] = <short>hn[j]


def linear(const short[:, ::1] x, const unsigned char[:, ::1] w,
           const int[::1] bias, int[:, ::1] out):
    """Shift-only affine layer; writes raw Acc32 sums (no saturation)."""
    import numpy as np
    cdef Py_ssize_t B = x.shape[0], K = x.shape[1], M = w.shape[0]
    cdef Py_ssize_t b, i, j
    s, g = _split_codes(w)
    cdef const int[:, ::1] sh = s
    cdef const int[:, ::1] sg = g
    cdef int[::1] v = np.empty(max(K, 1), dtype=np.int32)
    with nogil:
        for b in range(B):
            for i in range(K):
                v[i] = x[b, i]
            for j in range(M):
                out[b, j] = bias[j] + dot_shift(&v[0], &sh[j, 0], &sg[j, 0], K)


# --- scalar benchmark kernels (one unit, one input) -----------------------

def softsign_q15_array(const int[::1] x, short[::1] out):
    cdef Py_ssize_t i
    with nogil:
        for i in range(x.shape[0]):
            out[i] = <short>ss(clip_acc(x[i]))


def tanh_array(const double[::1] x, double[::1] out):
    cdef Py_ssize_t i
    with nogil:
        for i in range(x.shape[0]):
            out[i] = tanh(x[i])


def sigmoid_array(const double[::1] x, double[::1] out):
    cdef Py_ssize_t i
    with nogil:
        for i in range(x.shape[0]):
            out[i] = 1.0 / (1.0 + exp(-x[i]))


def relu_array(const double[::1] x, double[::1] out):
    cdef Py_ssize_t i
    with nogil:
        for i in range(x.shape[0]):
            out[i] = x[i] if x[i] > 0.0 else 0.0


def softsign_array(const double[::1] x, double[::1] out):
    cdef Py_ssize_t i
    with nogil:
        for i in range(x.shape[0]):
            out[i] = x[i] / (1.0 + fabs(x[i]))


def egru_scalar_run(const short[::1] x, const unsigned char[::1] codes,
                    int bz, int bh, short h0, short[::1] out):
    """Scalar eGRU over a sequence; ``codes`` = (wz_h, wz_x, wh_h, wh_x)."""
    cdef Py_ssize_t t
    cdef int h = h0, z, ht
    cdef unsigned char czh = codes[0], czx = codes[1], chh = codes[2], chx = codes[3]
    with nogil:
        for t in range(x.shape[0]):
            z = (ss(clip_acc(aw(h, czh) + aw(x[t], czx) + bz)) + 32768) >> 1
            ht = ss(clip_acc(aw(h, chh) + aw(x[t], chx) + bh))
            h = sat16(h + ((z * (ht - h)) >> 15))
            out[t] = <short>h


def gru_scalar_run(const double[::1] x, const double[::1] p, double h0, double[::1] out):
    """Scalar float GRU; ``p`` = (wz_h, wz_x, bz, wr_h, wr_x, br, wh_h, wh_x, bh)."""
    cdef Py_ssize_t t
    cdef double h = h0, z, r, ht
    with nogil:
        for t in range(x.shape[0]):
            z = 1.0 / (1.0 + exp(-(p[0] * h + p[1] * x[t] + p[2])))
            r = 1.0 / (1.0 + exp(-(p[3] * h + p[4] * x[t] + p[5])))
            ht = tanh(p[6] * (r * h) + p[7] * x[t] + p[8])
            h = (1.0 - z) * h + z * ht
            out[t] = h


def rnn_scalar_run(const double[::1] x, const double[::1] p, double h0, double[::1] out):
    """Scalar float tanh RNN; ``p`` = (w_h, w_x, b)."""
    cdef Py_ssize_t t
    cdef double h = h0
    with nogil:
        for t in range(x.shape[0]):
            h = tanh(p[0] * h + p[1] * x[t] + p[2])
            out[t] = h
