"""Small arithmetic expression grammar for configuration files.

Supported: numbers, ``+ - * / ^`` (``**`` also accepted), unary minus,
parentheses, ``sin cos exp sqrt`` and the constant ``pi``.  Variables are
whatever the caller allows (``x1..xm`` and ``t`` for fields, ``z1..z3`` for
potentials).  Evaluation is vectorized with numpy.
"""

import ast

import numpy as np

from .errors import ParseError, ValidationError

_FUNCS = {"sin": np.sin, "cos": np.cos, "exp": np.exp, "sqrt": np.sqrt}
_CONSTS = {"pi": np.pi}
_BINOPS = {
    ast.Add: np.add,
    ast.Sub: np.subtract,
    ast.Mult: np.multiply,
    ast.Div: np.divide,
    ast.Pow: np.power,
}


class Expression:
    """A parsed expression; call it with keyword arrays for its variables."""

    def __init__(self, text, variables):
        self.text = str(text)
        self.variables = tuple(variables)
        try:
            tree = ast.parse(self.text.replace("^", "**"), mode="eval")
        except SyntaxError as exc:
            raise ParseError(
                f"cannot parse expression {self.text!r}: {exc.msg}",
                line=exc.lineno,
                column=exc.offset,
            ) from None
        self._fn = self._compile(tree.body)

    def __repr__(self):
        return f"Expression({self.text!r})"

    def __eq__(self, other):
        return isinstance(other, Expression) and other.text == self.text

    def __hash__(self):
        return hash(self.text)

    def _compile(self, node):
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            value = float(node.value)
            return lambda env: value
        if isinstance(node, ast.Name):
            name = node.id
            if name in _CONSTS:
                value = _CONSTS[name]
                return lambda env: value
            if name in self.variables:
                return lambda env: env[name]
            raise ValidationError(
                f"unknown name {name!r} in {self.text!r}; allowed: {', '.join(self.variables)}",
                key=name,
            )
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            op = _BINOPS[type(node.op)]
            left, right = self._compile(node.left), self._compile(node.right)
            return lambda env: op(left(env), right(env))
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            inner = self._compile(node.operand)
            if isinstance(node.op, ast.USub):
                return lambda env: np.negative(inner(env))
            return inner
        if (
            isinstance(node, ast.Call)
            and isinstance(node.func, ast.Name)
            and node.func.id in _FUNCS
            and len(node.args) == 1
            and not node.keywords
        ):
            fn = _FUNCS[node.func.id]
            arg = self._compile(node.args[0])
            return lambda env: fn(arg(env))
        raise ValidationError(f"unsupported construct in expression {self.text!r}")

    def __call__(self, **env):
        missing = [v for v in env if v not in self.variables]
        if missing:
            raise ValidationError(f"unexpected variables {missing}")
        return self._fn(env)


def field_variables(dim):
    return tuple(f"x{i + 1}" for i in range(dim)) + ("t",)


POTENTIAL_VARIABLES = ("z1", "z2", "z3")
