"""A small symbolic language for variational forms.

Expressions are immutable trees. Multiplying an expression by a measure
(``dx`` or ``ds(marker)``) gives a :class:`Form`. Forms can be
differentiated (Gateaux derivative along a coefficient), adjointed, and
turned into residuals::

    u = FEFunction(V)
    v = TestFunction(V)
    F = inner((1 + u**2) * grad(u), grad(v)) * dx - f * v * dx
    J = derivative(F, u)           # bilinear in (TrialFunction, v)
    a_star = adjoint(derivative(F, u, at=u_h))

Only scalar-valued arguments are supported; vector values have shape (2,).
"""
from dataclasses import dataclass, field
import numbers
from typing import Any, Callable

import numpy as np


class FormError(ValueError):
    """Malformed expression or form (shape mismatch, nonlinearity in an argument, ...)."""


# -- operator plumbing ---------------------------------------------------------------

class Operand:
    """Arithmetic operators shared by expressions and finite element functions."""

    def __add__(self, other):
        return _add(as_expr(self), as_expr(other))

    def __radd__(self, other):
        return _add(as_expr(other), as_expr(self))

    def __sub__(self, other):
        return _add(as_expr(self), _mul(Constant(-1.0), as_expr(other)))

    def __rsub__(self, other):
        return _add(as_expr(other), _mul(Constant(-1.0), as_expr(self)))

    def __neg__(self):
        return _mul(Constant(-1.0), as_expr(self))

    def __mul__(self, other):
        if isinstance(other, Measure):
            return Form([Integral(as_expr(self), other.kind, other.marker)])
        return _mul(as_expr(self), as_expr(other))

    def __rmul__(self, other):
        return _mul(as_expr(other), as_expr(self))

    def __truediv__(self, other):
        if not isinstance(other, numbers.Real):
            raise FormError("division is only supported by real numbers")
        return _mul(Constant(1.0 / float(other)), as_expr(self))

    def __pow__(self, n):
        return power(as_expr(self), n)

    def __getitem__(self, i):
        e = as_expr(self)
        if e.shape != (2,):
            raise FormError("only 2-vectors can be indexed")
        unit = [0.0, 0.0]
        unit[int(i)] = 1.0
        return inner(e, Constant(unit))


class Expr(Operand):
    """Base class of expression nodes."""

    shape = ()

    def children(self):
        return ()


def as_expr(obj):
    if isinstance(obj, Expr):
        return obj
    if hasattr(obj, "__expr__"):
        return obj.__expr__()
    if isinstance(obj, numbers.Real):
        return Constant(float(obj))
    if isinstance(obj, (tuple, list, np.ndarray)) and np.shape(obj) == (2,):
        return Constant(obj)
    raise FormError(f"cannot use {type(obj).__name__} in a form expression")


# -- terminals -----------------------------------------------------------------------

@dataclass(frozen=True)
class Argument(Expr):
    """Test (``role='test'``) or trial (``role='trial'``) function on a space."""

    role: str
    space: Any = field(compare=True, hash=False)

    def __hash__(self):
        return hash((self.role, id(self.space)))

    def __eq__(self, other):
        return isinstance(other, Argument) and other.role == self.role and other.space is self.space


@dataclass(frozen=True, eq=False)
class Coefficient(Expr):
    """A finite element function appearing in a form."""

    function: Any

    def __hash__(self):
        return hash(("coef", id(self.function)))

    def __eq__(self, other):
        return isinstance(other, Coefficient) and other.function is self.function


@dataclass(frozen=True, eq=False)
class Expression(Expr):
    """Coefficient given by a Python callable of physical points.

    ``func`` maps an array of points (..., 2) to values (...) or (..., 2).
    ``degree`` is the polynomial degree assumed for quadrature selection.
    ``gradient`` optionally maps points to gradients (..., 2) so that
    ``grad`` of a scalar expression can be formed.
    """

    func: Callable
    value_shape: tuple = ()
    degree: int = 2
    gradient: Callable = None

    @property
    def shape(self):
        return tuple(self.value_shape)


@dataclass(frozen=True, eq=False)
class CellwiseConstant(Expr):
    """Piecewise-constant data: one value per mesh cell."""

    values: np.ndarray
    mesh: Any = None


@dataclass(frozen=True)
class SpatialCoordinate(Expr):
    shape = (2,)


@dataclass(frozen=True)
class FacetNormal(Expr):
    shape = (2,)


@dataclass(frozen=True, init=False)
class Constant(Expr):
    """Real or 2-vector constant."""

    value: Any

    def __init__(self, value):
        if np.ndim(value) == 0:
            v = float(value)
        elif np.shape(value) == (2,):
            v = (float(value[0]), float(value[1]))
        else:
            raise FormError("constants are scalars or 2-vectors")
        object.__setattr__(self, "value", v)

    @property
    def shape(self):
        return (2,) if isinstance(self.value, tuple) else ()

    @property
    def array(self):
        return np.array(self.value)

    def is_zero(self):
        return np.all(self.array == 0.0)


# -- operators -----------------------------------------------------------------------

@dataclass(frozen=True)
class Grad(Expr):
    operand: Expr
    shape = (2,)

    def children(self):
        return (self.operand,)


@dataclass(frozen=True)
class Div(Expr):
    operand: Expr
    shape = ()

    def children(self):
        return (self.operand,)


@dataclass(frozen=True)
class Inner(Expr):
    left: Expr
    right: Expr
    shape = ()

    def children(self):
        return (self.left, self.right)


@dataclass(frozen=True)
class Sum(Expr):
    terms: tuple

    @property
    def shape(self):
        return self.terms[0].shape

    def children(self):
        return self.terms


@dataclass(frozen=True)
class Product(Expr):
    """Product of a scalar ``left`` with a scalar or vector ``right``."""

    left: Expr
    right: Expr

    @property
    def shape(self):
        return self.right.shape

    def children(self):
        return (self.left, self.right)


@dataclass(frozen=True)
class Power(Expr):
    base: Expr
    exponent: int
    shape = ()

    def children(self):
        return (self.base,)


def _zero(shape):
    return Constant((0.0, 0.0)) if shape == (2,) else Constant(0.0)


def _is_zero(e):
    return isinstance(e, Constant) and e.is_zero()


def _add(a, b):
    if a.shape != b.shape:
        raise FormError(f"cannot add shapes {a.shape} and {b.shape}")
    terms = []
    for t in (a, b):
        terms.extend(t.terms if isinstance(t, Sum) else (t,))
    consts = [t for t in terms if isinstance(t, Constant)]
    others = [t for t in terms if not isinstance(t, Constant)]
    if consts:
        c = Constant(sum(t.array for t in consts))
        if not c.is_zero():
            others.append(c)
    if not others:
        return _zero(a.shape)
    if len(others) == 1:
        return others[0]
    return Sum(tuple(others))


def _mul(a, b):
    if a.shape and b.shape:
        raise FormError("use inner() for products of two vectors")
    if a.shape:
        a, b = b, a
    if _is_zero(a) or _is_zero(b):
        return _zero(b.shape)
    if isinstance(a, Constant) and isinstance(b, Constant):
        return Constant(a.value * b.array)
    if isinstance(a, Constant) and a.value == 1.0:
        return b
    if isinstance(b, Constant) and not b.shape and b.value == 1.0:
        return a
    if isinstance(b, Constant) and not b.shape:
        a, b = b, a
    return Product(a, b)


def inner(a, b):
    """Inner product (dot product for vectors, product for scalars)."""
    a, b = as_expr(a), as_expr(b)
    if a.shape != b.shape:
        raise FormError(f"inner() of mismatched shapes {a.shape} and {b.shape}")
    if not a.shape:
        return _mul(a, b)
    if _is_zero(a) or _is_zero(b):
        return Constant(0.0)
    if isinstance(a, Constant) and isinstance(b, Constant):
        return Constant(float(a.array @ b.array))
    return Inner(a, b)


dot = inner


def grad(e):
    e = as_expr(e)
    if e.shape:
        raise FormError("grad() of a vector is not supported")
    if isinstance(e, Constant):
        return _zero((2,))
    return Grad(e)


def div(e):
    e = as_expr(e)
    if e.shape != (2,):
        raise FormError("div() needs a 2-vector")
    if isinstance(e, Constant):
        return Constant(0.0)
    return Div(e)


def power(e, n):
    e = as_expr(e)
    if not isinstance(n, numbers.Integral) or n < 0:
        raise FormError("only nonnegative integer exponents are supported")
    if e.shape:
        raise FormError("power() of a vector")
    n = int(n)
    if n == 0:
        return Constant(1.0)
    if n == 1:
        return e
    if isinstance(e, Constant):
        return Constant(e.value**n)
    return Power(e, n)


def TestFunction(space):
    return Argument("test", space)


def TrialFunction(space):
    return Argument("trial", space)


# -- measures and forms ----------------------------------------------------------------

@dataclass(frozen=True)
class Measure:
    """Integration measure: ``dx`` over cells or ``ds(marker)`` over boundary facets."""

    kind: str
    marker: Any = None

    def __call__(self, marker=None):
        return Measure(self.kind, marker)

    def __rmul__(self, other):
        return Form([Integral(as_expr(other), self.kind, self.marker)])


dx = Measure("cell")
ds = Measure("exterior_facet")


@dataclass(frozen=True)
class Integral:
    integrand: Expr
    kind: str
    marker: Any = None


class Form:
    """A sum of integrals, linear in its test and trial arguments."""

    def __init__(self, integrals):
        self.integrals = tuple(integrals)
        roles = None
        for itg in self.integrals:
            if itg.integrand.shape != ():
                raise FormError("integrands must be scalar")
            r = argument_roles(itg.integrand)
            if roles is None:
                roles = r
            elif r != roles:
                raise FormError("all integrals of a form must share the same arguments")
        self.arguments = roles or {}

    @property
    def arity(self):
        return len(self.arguments)

    def argument(self, role):
        return self.arguments.get(role)

    def coefficients(self):
        out = []
        for itg in self.integrals:
            for n in traverse(itg.integrand):
                if isinstance(n, Coefficient) and all(n.function is not c for c in out):
                    out.append(n.function)
        return out

    def __add__(self, other):
        if isinstance(other, numbers.Real) and other == 0:
            return self
        if not isinstance(other, Form):
            return NotImplemented
        return Form(self.integrals + other.integrals)

    __radd__ = __add__

    def __neg__(self):
        return self._scale(-1.0)

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, c):
        if not isinstance(c, numbers.Real):
            return NotImplemented
        return self._scale(float(c))

    __rmul__ = __mul__

    def _scale(self, c):
        return Form([Integral(_mul(Constant(c), i.integrand), i.kind, i.marker) for i in self.integrals])

    def __repr__(self):
        return f"Form(arity={self.arity}, integrals={len(self.integrals)})"


# -- tree utilities --------------------------------------------------------------------

def traverse(e):
    """Pre-order iterator over the nodes of an expression."""
    stack = [e]
    while stack:
        n = stack.pop()
        yield n
        stack.extend(reversed(n.children()))


def rebuild(e, children):
    """Reconstruct node ``e`` with new children, re-applying simplifications."""
    if isinstance(e, Grad):
        return grad(children[0])
    if isinstance(e, Div):
        return div(children[0])
    if isinstance(e, Inner):
        return inner(*children)
    if isinstance(e, Sum):
        out = children[0]
        for c in children[1:]:
            out = _add(out, c)
        return out
    if isinstance(e, Product):
        return _mul(*children)
    if isinstance(e, Power):
        return power(children[0], e.exponent)
    return e


def map_expr(e, fn):
    """Bottom-up rewrite: ``fn(node)`` returns a replacement or None to recurse."""
    r = fn(e)
    if r is not None:
        return r
    kids = e.children()
    if not kids:
        return e
    return rebuild(e, [map_expr(k, fn) for k in kids])


def argument_degree(e, role):
    """Polynomial degree of ``e`` in the argument ``role`` (0 or 1).

    Raises FormError when the expression is not linear in the argument.
    """
    if isinstance(e, Argument):
        return 1 if e.role == role else 0
    if isinstance(e, Sum):
        degs = {argument_degree(t, role) for t in e.terms}
        if len(degs) > 1:
            raise FormError(f"expression is affine, not linear, in the {role} function")
        return degs.pop()
    if isinstance(e, (Product, Inner)):
        d = argument_degree(e.children()[0], role) + argument_degree(e.children()[1], role)
    elif isinstance(e, Power):
        d = argument_degree(e.base, role) * e.exponent
    elif isinstance(e, (Grad, Div)):
        d = argument_degree(e.operand, role)
    else:
        d = 0
    if d > 1:
        raise FormError(f"expression is nonlinear in the {role} function")
    return d


def argument_roles(e):
    """Map role -> Argument for the arguments an integrand is linear in."""
    found = {}
    for n in traverse(e):
        if isinstance(n, Argument):
            prev = found.get(n.role)
            if prev is not None and prev != n:
                raise FormError(f"two different {n.role} functions in one form")
            found[n.role] = n
    for role in found:
        if argument_degree(e, role) != 1:
            raise FormError(f"integrand is not linear in the {role} function")
    return found


def replace(obj, mapping):
    """Substitute coefficients (or arguments) according to ``mapping``.

    Keys and values may be finite element functions or expression nodes.
    """
    table = {}
    for k, v in mapping.items():
        table[as_expr(k)] = as_expr(v)

    def fn(n):
        return None if n.children() else table.get(n)

    if isinstance(obj, Form):
        return Form([Integral(map_expr(i.integrand, fn), i.kind, i.marker) for i in obj.integrals])
    return map_expr(as_expr(obj), fn)


# -- differentiation ----------------------------------------------------------------------

def _gateaux(e, target, direction):
    if isinstance(e, Coefficient):
        return direction if e.function is target else Constant(0.0)
    if not e.children():
        return _zero(e.shape)
    if isinstance(e, Sum):
        out = _zero(e.shape)
        for t in e.terms:
            out = _add(out, _gateaux(t, target, direction))
        return out
    if isinstance(e, Product):
        return _add(_mul(_gateaux(e.left, target, direction), e.right),
                    _mul(e.left, _gateaux(e.right, target, direction)))
    if isinstance(e, Inner):
        return _add(inner(_gateaux(e.left, target, direction), e.right),
                    inner(e.left, _gateaux(e.right, target, direction)))
    if isinstance(e, Power):
        db = _gateaux(e.base, target, direction)
        return _mul(_mul(Constant(float(e.exponent)), power(e.base, e.exponent - 1)), db)
    if isinstance(e, Grad):
        return grad(_gateaux(e.operand, target, direction))
    if isinstance(e, Div):
        return div(_gateaux(e.operand, target, direction))
    raise FormError(f"cannot differentiate {type(e).__name__}")


def derivative(form, u, du=None, at=None):
    """Gateaux derivative of ``form`` with respect to the coefficient ``u``.

    The direction defaults to a new test function for functionals and to a
    trial function for linear forms. When ``at`` is given, the remaining
    occurrences of ``u`` are bound to that function.
    """
    if du is None:
        if form.arity == 0:
            du = TestFunction(u.space)
        elif form.arity == 1 and "trial" not in form.arguments:
            du = TrialFunction(u.space)
        else:
            raise FormError("derivative of a bilinear form needs an explicit direction")
    du = as_expr(du)
    out = []
    for itg in form.integrals:
        d = _gateaux(itg.integrand, u, du)
        if not _is_zero(d):
            out.append(Integral(d, itg.kind, itg.marker))
    if not out:
        out = [Integral(Product(Constant(0.0), du), "cell")]
    result = Form(out)
    if at is not None and at is not u:
        if at.space.mesh is not u.space.mesh or at.space.degree != u.space.degree:
            raise FormError("linearization point lives in a different space")
        result = replace(result, {u: at})
    return result


def adjoint(form):
    """Swap the test and trial roles of a bilinear form."""
    if form.arity != 2:
        raise FormError("adjoint() needs a bilinear form")
    test, trial = form.arguments["test"], form.arguments["trial"]
    new_test, new_trial = Argument("test", trial.space), Argument("trial", test.space)

    def fn(n):
        if n == test:
            return new_trial
        if n == trial:
            return new_test
        return None

    return Form([Integral(map_expr(i.integrand, fn), i.kind, i.marker) for i in form.integrals])


def action(form, function):
    """Replace the last argument (trial, else test) by ``function``."""
    role = "trial" if "trial" in form.arguments else "test"
    arg = form.arguments.get(role)
    if arg is None:
        raise FormError("action() of a functional")
    return replace(form, {arg: function})


def residual_form(F, u_h, u=None):
    """Weak residual ``v -> -F(u_h; v)``, or ``L(v) - a(u_h, v)`` for a pair ``(a, L)``.

    When ``u`` is given, its occurrences in ``F`` are replaced by ``u_h``.
    """
    if isinstance(F, tuple):
        a, L = F
        trial = a.arguments.get("trial")
        if trial is None or trial.space.mesh is not u_h.space.mesh or trial.space.degree != u_h.space.degree:
            raise FormError("u_h does not live in the trial space of a")
        return L - action(a, u_h)
    if F.arity != 1:
        raise FormError("residual_form needs a form that is linear in its test function")
    if u is not None and u is not u_h:
        if u.space.mesh is not u_h.space.mesh or u.space.degree != u_h.space.degree:
            raise FormError("u_h does not live in the space of u")
        F = replace(F, {u: u_h})
    return -F


def is_linear_in(form, u):
    """True when the form depends at most affinely on the coefficient ``u``."""
    try:
        d = derivative(form, u)
    except FormError:
        return False
    return all(not any(isinstance(n, Coefficient) and n.function is u for n in traverse(i.integrand))
               for i in d.integrals)


# -- expansion used by evaluation --------------------------------------------------------

def _is_terminal(e):
    return not e.children()


def expand_grad(e):
    """Gradient of scalar ``e`` with Grad pushed onto terminals."""
    if isinstance(e, (Constant, CellwiseConstant)):
        return _zero((2,))
    if isinstance(e, (Argument, Coefficient)):
        return Grad(e)
    if isinstance(e, Expression):
        if e.gradient is None:
            raise FormError("grad() of an Expression without a gradient callable")
        return Grad(e)
    if isinstance(e, Sum):
        out = _zero((2,))
        for t in e.terms:
            out = _add(out, expand_grad(t))
        return out
    if isinstance(e, Product):
        return _add(_mul(e.left, expand_grad(e.right)), _mul(e.right, expand_grad(e.left)))
    if isinstance(e, Power):
        return _mul(_mul(Constant(float(e.exponent)), power(e.base, e.exponent - 1)), expand_grad(e.base))
    if isinstance(e, Inner):
        l, r = e.left, e.right
        if isinstance(l, SpatialCoordinate) and isinstance(r, Constant):
            return r
        if isinstance(r, SpatialCoordinate) and isinstance(l, Constant):
            return l
        raise FormError("grad() of an inner product of vectors is not supported")
    if isinstance(e, Div):
        raise FormError("grad() of div() is not supported")
    raise FormError(f"grad() of {type(e).__name__} is not supported")


def expand_div(e):
    """Divergence of vector ``e`` with derivatives pushed onto terminals."""
    if isinstance(e, Constant):
        return Constant(0.0)
    if isinstance(e, SpatialCoordinate):
        return Constant(2.0)
    if isinstance(e, Grad):
        op = e.operand
        if isinstance(op, (Argument, Coefficient)):
            return Div(Grad(op))
        if _is_terminal(op):
            raise FormError(f"div(grad()) of {type(op).__name__} is not supported")
        return expand_div(expand_grad(op))
    if isinstance(e, Sum):
        out = Constant(0.0)
        for t in e.terms:
            out = _add(out, expand_div(t))
        return out
    if isinstance(e, Product):
        return _add(inner(expand_grad(e.left), e.right), _mul(e.left, expand_div(e.right)))
    raise FormError(f"div() of {type(e).__name__} is not supported")


def expand(e):
    """Rewrite so that Grad only wraps terminals and Div only wraps Grad(terminal)."""
    def fn(n):
        if isinstance(n, Grad):
            inner_ = expand(n.operand)
            return expand_grad(inner_)
        if isinstance(n, Div):
            return expand_div(expand(n.operand)) if not (
                isinstance(n.operand, Grad) and _is_terminal(n.operand.operand)) else n
        return None
    return map_expr(e, fn)


def estimate_degree(e, arg_degrees, coefficient_degree=None):
    """Polynomial degree estimate of an integrand for quadrature selection."""
    def deg(n):
        if isinstance(n, Argument):
            return arg_degrees.get(n.role, n.space.degree)
        if isinstance(n, Coefficient):
            return n.function.space.degree
        if isinstance(n, Expression):
            return n.degree
        if isinstance(n, SpatialCoordinate):
            return 1
        if isinstance(n, (Constant, CellwiseConstant, FacetNormal)):
            return 0
        if isinstance(n, (Grad, Div)):
            return max(deg(n.operand) - 1, 0)
        if isinstance(n, Sum):
            return max(deg(t) for t in n.terms)
        if isinstance(n, (Product, Inner)):
            return deg(n.children()[0]) + deg(n.children()[1])
        if isinstance(n, Power):
            return deg(n.base) * n.exponent
        raise FormError(f"unknown node {type(n).__name__}")
    return deg(e)
