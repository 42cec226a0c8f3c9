from fractions import Fraction

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from narrownet.errors import (DegeneratePatternError, IncompleteCertificateError, MalformedCertificateError,
                              PreconditionError, SchemaError, UnsupportedError)
from narrownet.escape import (EscapeCertificate, affine_collapse, escape_certificate, forward_exact,
                              verify_certificate)
from narrownet.geometry import contains
from narrownet.invertible import Box, invertibilize_network
from narrownet.net_core import RELU, TANH, decide, decide_batch, forward, leaky, random_network
from narrownet.regions import random_narrow_net


def invertible_net(rng, d_in, act=RELU):
    net = random_narrow_net(rng, d_in, act)
    return invertibilize_network(net, Box.cube(-1, 1, d_in), 1e-3, 1000)[0]


def independent_check(net, cert, n=2000, seed=0):
    """Class along the certificate at random (not gridded) parameters, far out on the ray."""
    rng = np.random.default_rng(seed)
    code = net.class_code(cert.cls)
    pts = []
    for a, b in zip(cert.vertices[:-1], cert.vertices[1:]):
        s = rng.uniform(0, 1, (n, 1))
        pts.append(a + s * (b - a))
    lam = 10 ** rng.uniform(-8, 6, n)
    pts.append(cert.terminal + lam[:, None] * cert.direction)
    return np.all(decide_batch(net, np.vstack(pts)) == code)


def test_affine_collapse_example(rotation_net):
    piece = affine_collapse(rotation_net, [0.5, 0.5])
    np.testing.assert_allclose(piece.matrix, [[0.5, 0.5]], atol=1e-15)
    np.testing.assert_allclose(piece.offset, [0.75], atol=1e-15)
    assert contains(piece.validity, [0.5, 0.5])


@settings(max_examples=60, deadline=None)
@given(d_in=st.integers(2, 4), act=st.sampled_from([RELU, leaky(0.1)]), seed=st.integers(0, 2**31))
def test_affine_collapse_agrees_on_its_region(d_in, act, seed):
    rng = np.random.default_rng(seed)
    net = random_narrow_net(rng, d_in, act)
    x0 = rng.standard_normal(d_in)
    piece = affine_collapse(net, x0)
    np.testing.assert_allclose(piece(x0), forward(net, x0), atol=1e-10)
    pts = x0 + 1e-2 * rng.standard_normal((200, d_in))
    inside = contains(piece.validity, pts)
    np.testing.assert_allclose(piece(pts[inside]), forward(net, pts[inside]), atol=1e-9)


def test_affine_collapse_degenerate(rotation_net):
    # second unit's preactivation (-x1 + x2 - 1) / sqrt(2) vanishes exactly at (0, 1)
    with pytest.raises(DegeneratePatternError):
        affine_collapse(rotation_net, [0.0, 1.0])
    with pytest.raises(UnsupportedError):
        affine_collapse(random_narrow_net(np.random.default_rng(0), 2, TANH), [0.0, 0.0])


def test_rotation_net_certificate(rotation_net):
    cert = escape_certificate(rotation_net, [-0.9, -0.9], R_max=1e3)
    assert cert.cls == "neg"
    assert cert.segment_count == 1
    np.testing.assert_allclose(cert.direction, [np.sqrt(0.5), -np.sqrt(0.5)], atol=1e-15)
    assert cert.analytic_terminal
    values = set()
    for lam in (1, 10, 1e3, 1e6):
        x = [Fraction(v) + Fraction(lam) * Fraction(d) for v, d in zip(cert.terminal, cert.direction)]
        values.add(forward_exact(rotation_net, x)[0])
    assert len(values) == 1 and values.pop() < 0


def test_certificate_round_trip(rotation_net):
    cert = escape_certificate(rotation_net, [-0.9, 0.95])
    back = EscapeCertificate.deserialize(cert.serialize())
    assert back.serialize() == cert.serialize()
    assert verify_certificate(rotation_net, back).constant_class


@settings(max_examples=40, deadline=None)
@given(d_in=st.integers(2, 3), seed=st.integers(0, 2**31))
def test_relu_certificates_verify_independently(d_in, seed):
    rng = np.random.default_rng(seed)
    net = invertible_net(rng, d_in)
    x0 = rng.uniform(-1, 1, d_in)
    assume(decide(net, x0) is not None)
    cert = escape_certificate(net, x0)
    assert cert.segment_count <= len(net.hidden) + 1
    assert independent_check(net, cert, seed=seed)


@settings(max_examples=60, deadline=None)
@given(d_in=st.integers(2, 4), depth=st.integers(1, 4), beta=st.sampled_from([0.1, 0.2, 0.4]),
       seed=st.integers(0, 2**31))
def test_leaky_certificates_verify_independently(d_in, depth, beta, seed):
    rng = np.random.default_rng(seed)
    net = random_network(rng, [d_in] * (depth + 1) + [int(rng.integers(1, d_in + 1))], leaky(beta))
    assume(max(np.linalg.cond(layer.weights) for layer in net.hidden) < 1e3)
    x0 = rng.uniform(-1, 1, d_in)
    assume(decide(net, x0) is not None)
    cert = escape_certificate(net, x0)
    assert independent_check(net, cert, seed=seed)


@settings(max_examples=60, deadline=None)
@given(d_in=st.integers(2, 3), seed=st.integers(0, 2**31))
def test_ill_conditioned_leaky_never_returns_a_bad_certificate(d_in, seed):
    # perturbed rank-deficient layers can be too ill-conditioned for double precision;
    # construction must then refuse rather than hand back a wrong certificate
    rng = np.random.default_rng(seed)
    net = invertible_net(rng, d_in, leaky(0.1))
    x0 = rng.uniform(-1, 1, d_in)
    assume(decide(net, x0) is not None)
    try:
        cert = escape_certificate(net, x0)
    except IncompleteCertificateError:
        return
    assert verify_certificate(net, cert).constant_class


def test_tampered_certificate_fails(rotation_net):
    cert = escape_certificate(rotation_net, [-0.9, -0.9])
    cert.direction = np.array([np.sqrt(0.5), np.sqrt(0.5)])  # towards the positive region
    report = verify_certificate(rotation_net, cert)
    assert not report.constant_class and report.violations > 0


def test_malformed_certificates(rotation_net):
    cert = escape_certificate(rotation_net, [-0.9, -0.9])
    cert.direction = np.zeros(2)
    with pytest.raises(MalformedCertificateError):
        verify_certificate(rotation_net, cert)
    with pytest.raises(SchemaError):
        EscapeCertificate.deserialize('{"class": "neg"}')


def test_escape_preconditions(rotation_net):
    with pytest.raises(PreconditionError):
        escape_certificate(rotation_net, [0.0, 0.0, 0.0])
    # F vanishes at the origin of this one
    from narrownet.net_core import Layer, Network
    flat = Network((Layer(np.eye(2), [0, 0]),), Layer([[1.0, -1.0]], [0.0]))
    with pytest.raises(PreconditionError):
        escape_certificate(flat, [1.0, 1.0])
    with pytest.raises(UnsupportedError):
        escape_certificate(random_narrow_net(np.random.default_rng(1), 2, TANH), [0.1, 0.2])


def test_forward_exact_matches_float():
    rng = np.random.default_rng(5)
    for _ in range(20):
        net = random_narrow_net(rng, 3, leaky(0.25))
        x = rng.standard_normal(3)
        exact = np.array([float(v) for v in forward_exact(net, x)])
        np.testing.assert_allclose(exact, forward(net, x), atol=1e-12)
