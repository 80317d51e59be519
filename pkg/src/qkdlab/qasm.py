"""Parser and emitter for a small OpenQASM 2.0 subset.

Accepted statements: the `OPENQASM 2.0;` header, `include "...";`
(ignored), `qreg`/`creg` declarations, the gates h, x, y, z, s, sdg, t,
tdg, id, u1(theta)/p(theta), cx, cy, cz, `barrier` (kept as a position
annotation), and `measure q[i] -> c[j];`. Angles accept `pi`, `k*pi`,
`pi/m`, `k*pi/m`, an optional leading minus, and decimal literals.

Multiple quantum registers are folded into one index space: a register's
offset is the total size of all registers declared before it. Classical
registers fold the same way. Measurements must come last; the classical
target index is validated but not retained (emission re-derives it as
the identity map). Note that `s`/`sdg` follow this package's S
convention (see the core module docstring).

Emission is canonical and deterministic: one register `q`, one barrier
spelling (`barrier q;`), `u1(...)` for phase gates, and LF line endings,
so equal circuits emit byte-identical text.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from fractions import Fraction

from .core import Circuit, GateOp


@dataclass(frozen=True)
class ParseError(Exception):
    line: int
    column: int
    message: str
    kind: str  # syntax | unknown-gate | range | redeclaration

    def __str__(self) -> str:
        return f"line {self.line}, col {self.column}: {self.message}"


_GATE_FOR_TOKEN = {
    "id": "I",
    "x": "X",
    "y": "Y",
    "z": "Z",
    "h": "H",
    "s": "S",
    "sdg": "Sdg",
    "t": "T",
    "tdg": "Tdg",
}
_TOKEN_FOR_GATE = {v: k for k, v in _GATE_FOR_TOKEN.items()}
_CONTROLLED_TOKENS = {"cx": "X", "cy": "Y", "cz": "Z"}
_TOKEN_FOR_CONTROLLED = {v: k for k, v in _CONTROLLED_TOKENS.items()}
_PARAM_TOKENS = ("u1", "p")

_REJECTED_KEYWORDS = ("if", "gate", "opaque", "reset")

_DECIMAL_RE = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")
_PI_RE = re.compile(r"^(-)?(?:(\d+)\*)?pi(?:/(\d+))?$")
_REF_RE = re.compile(r"^\s*([A-Za-z_][A-Za-z0-9_]*)\s*\[\s*(\d+)\s*\]\s*$")


def parse_angle(text: str) -> float:
    """Radians from the angle grammar; raises ValueError on bad syntax."""
    s = text.strip().replace(" ", "")
    m = _PI_RE.match(s)
    if m:
        sign = -1.0 if m.group(1) else 1.0
        k = int(m.group(2)) if m.group(2) else 1
        denom = int(m.group(3)) if m.group(3) else 1
        if denom == 0:
            raise ValueError("zero denominator in angle")
        return sign * k * math.pi / denom
    if _DECIMAL_RE.match(s):
        return float(s)
    raise ValueError(f"bad angle syntax: {text!r}")


def format_angle(theta: float) -> str:
    """Canonical angle spelling; pi-rational when that parses back exactly."""
    if theta == 0:
        return "0"
    frac = Fraction(theta / math.pi).limit_denominator(10000)
    k, m = frac.numerator, frac.denominator
    if k != 0:
        if m == 1:
            text = "pi" if k == 1 else ("-pi" if k == -1 else f"{k}*pi")
        elif k == 1:
            text = f"pi/{m}"
        elif k == -1:
            text = f"-pi/{m}"
        else:
            text = f"{k}*pi/{m}"
        if parse_angle(text) == theta:
            return text
    return repr(theta)


class _Registers:
    """Declaration-ordered registers folded into one index space."""

    def __init__(self):
        self.offsets: dict[str, int] = {}
        self.sizes: dict[str, int] = {}
        self.total = 0

    def declare(self, name: str, size: int) -> None:
        self.offsets[name] = self.total
        self.sizes[name] = size
        self.total += size

    def resolve(self, name: str, index: int) -> int | None:
        if name not in self.sizes or index >= self.sizes[name]:
            return None
        return self.offsets[name] + index


def parse(source: str) -> Circuit:
    """Parse QASM text into a Circuit; raises ParseError with position."""
    qregs = _Registers()
    cregs = _Registers()
    ops: list[GateOp] = []
    barriers: list[int] = []
    measured: set[int] = set()
    saw_version = False
    saw_measure = False

    def err(lineno: int, col: int, message: str, kind: str):
        return ParseError(line=lineno, column=col, message=message, kind=kind)

    def qubit_ref(token: str, lineno: int, col: int) -> int:
        m = _REF_RE.match(token)
        if not m:
            raise err(lineno, col, f"expected a qubit reference, got {token.strip()!r}", "syntax")
        idx = qregs.resolve(m.group(1), int(m.group(2)))
        if idx is None:
            raise err(lineno, col, f"qubit reference {token.strip()!r} out of range", "range")
        return idx

    for lineno, raw in enumerate(source.splitlines(), start=1):
        line = raw.split("//", 1)[0]
        pos = 0
        while True:
            stripped = line[pos:].lstrip()
            if not stripped:
                break
            col = pos + (len(line[pos:]) - len(stripped)) + 1
            end = line.find(";", pos)
            if end < 0:
                raise err(lineno, col, "missing ';'", "syntax")
            stmt = line[pos:end].strip()
            pos = end + 1

            head = re.match(r"[A-Za-z_][A-Za-z0-9_.]*", stmt)
            keyword = head.group(0) if head else ""

            if keyword == "OPENQASM":
                if stmt != "OPENQASM 2.0":
                    raise err(lineno, col, "only OPENQASM 2.0 is supported", "syntax")
                saw_version = True
                continue
            if not saw_version:
                raise err(lineno, col, "missing 'OPENQASM 2.0;' header", "syntax")
            if keyword == "include":
                if not re.fullmatch(r'include\s+"[^"]*"', stmt):
                    raise err(lineno, col, "malformed include", "syntax")
                continue
            if keyword in _REJECTED_KEYWORDS:
                raise err(lineno, col, f"'{keyword}' statements are not supported", "syntax")
            if keyword in ("qreg", "creg"):
                m = re.fullmatch(rf"{keyword}\s+([A-Za-z_][A-Za-z0-9_]*)\s*\[\s*(\d+)\s*\]", stmt)
                if not m:
                    raise err(lineno, col, f"malformed {keyword} declaration", "syntax")
                name, size = m.group(1), int(m.group(2))
                regs = qregs if keyword == "qreg" else cregs
                if name in regs.sizes:
                    raise err(lineno, col, f"register {name!r} already declared", "redeclaration")
                if size < 1:
                    raise err(lineno, col, "register size must be positive", "range")
                regs.declare(name, size)
                continue
            if keyword == "barrier":
                if saw_measure:
                    raise err(lineno, col, "barrier after measurement", "syntax")
                barriers.append(len(ops))
                continue
            if keyword == "measure":
                m = re.fullmatch(r"measure\s+(.+?)\s*->\s*(.+)", stmt)
                if not m:
                    raise err(lineno, col, "malformed measure statement", "syntax")
                q = qubit_ref(m.group(1), lineno, col)
                cm = _REF_RE.match(m.group(2))
                if not cm:
                    raise err(lineno, col, "expected a classical bit reference", "syntax")
                if cregs.resolve(cm.group(1), int(cm.group(2))) is None:
                    raise err(lineno, col, f"classical reference {m.group(2).strip()!r} out of range", "range")
                measured.add(q)
                saw_measure = True
                continue

            # gate statement
            if saw_measure:
                raise err(lineno, col, "gate after measurement", "syntax")
            m = re.fullmatch(r"([A-Za-z_][A-Za-z0-9_]*)\s*(\(([^)]*)\))?\s+(.*)", stmt)
            if not m:
                raise err(lineno, col, f"malformed statement: {stmt!r}", "syntax")
            name, param = m.group(1), m.group(3)
            args = m.group(4).split(",")
            if name in _PARAM_TOKENS:
                if param is None:
                    raise err(lineno, col, f"{name} requires an angle argument", "syntax")
                try:
                    theta = parse_angle(param)
                except ValueError as exc:
                    raise err(lineno, col, str(exc), "syntax") from None
                if len(args) != 1:
                    raise err(lineno, col, f"{name} takes one qubit", "syntax")
                ops.append(GateOp("P", qubit_ref(args[0], lineno, col), theta=theta))
                continue
            if param is not None:
                raise err(lineno, col, f"gate {name!r} takes no parameters", "syntax")
            if name in _GATE_FOR_TOKEN:
                if len(args) != 1:
                    raise err(lineno, col, f"{name} takes one qubit", "syntax")
                ops.append(GateOp(_GATE_FOR_TOKEN[name], qubit_ref(args[0], lineno, col)))
                continue
            if name in _CONTROLLED_TOKENS:
                if len(args) != 2:
                    raise err(lineno, col, f"{name} takes control and target qubits", "syntax")
                control = qubit_ref(args[0], lineno, col)
                target = qubit_ref(args[1], lineno, col)
                if control == target:
                    raise err(lineno, col, "control and target must differ", "range")
                ops.append(GateOp(_CONTROLLED_TOKENS[name], target, control=control))
                continue
            raise err(lineno, col, f"unknown gate {name!r}", "unknown-gate")

    if qregs.total == 0:
        raise ParseError(line=1, column=1, message="no quantum register declared", kind="syntax")
    return Circuit(
        n_qubits=qregs.total,
        ops=tuple(ops),
        measured=frozenset(measured),
        barriers=tuple(barriers),
    )


def emit(circuit: Circuit) -> str:
    """Canonical QASM text; parse(emit(c)) equals c structurally."""
    lines = ['OPENQASM 2.0;', 'include "qelib1.inc";', f"qreg q[{circuit.n_qubits}];"]
    if circuit.measured:
        lines.append(f"creg c[{circuit.n_qubits}];")
    barrier_at = {}
    for b in circuit.barriers:
        barrier_at[b] = barrier_at.get(b, 0) + 1
    for i, op in enumerate(circuit.ops):
        lines.extend(["barrier q;"] * barrier_at.get(i, 0))
        lines.append(_emit_op(op))
    lines.extend(["barrier q;"] * barrier_at.get(len(circuit.ops), 0))
    for q in sorted(circuit.measured):
        lines.append(f"measure q[{q}] -> c[{q}];")
    return "\n".join(lines) + "\n"


def _emit_op(op: GateOp) -> str:
    if op.control is not None:
        token = _TOKEN_FOR_CONTROLLED.get(op.kind)
        if token is None:
            raise ValueError(f"controlled {op.kind} has no QASM spelling in this subset")
        return f"{token} q[{op.control}], q[{op.target}];"
    if op.kind == "P":
        return f"u1({format_angle(op.theta)}) q[{op.target}];"
    return f"{_TOKEN_FOR_GATE[op.kind]} q[{op.target}];"
