"""Parsing, desugaring and printing of guest programs.

Concrete syntax is a subset of JavaScript, parsed with ``esprima``. The
parser maps the ESTree output onto :mod:`accel.syntax` and rejects anything
outside the supported fragment with :class:`UnsupportedFeature`.
:func:`desugar` then reduces the surface forms to the core fragment: loops
become ``while``, ``switch`` becomes labelled ``if`` chains, every function
and every call is bound by a ``let``, and binders get globally unique names.
"""

from __future__ import annotations

import json
import math
import re

import esprima

from .errors import CompileError, ParseError, UnsupportedFeature
from .syntax import (
    BUILTINS, UNDEFINED, ArrayLit, Assign, BinOp, Block, Break, Call, Cond, Const, Continue,
    ExprStmt, For, Function, If, Index, Labeled, Let, MethodCall, Name, ObjectLit, PrimCall,
    Program, Return, Switch, UnOp, While, walk,
)

BINARY_OPS = {"+", "-", "*", "/", "%", "<", ">", "<=", ">=", "===", "!==", "==", "!="}
LOGICAL_OPS = {"&&", "||"}
UNARY_OPS = {"-", "+", "!", "typeof"}

# global primitive functions, keyed by their dotted name
PRIMITIVES = {
    "Math.floor", "Math.ceil", "Math.round", "Math.abs", "Math.min", "Math.max", "Math.sqrt",
    "Math.pow", "Math.trunc", "JSON.stringify", "JSON.parse", "Object.keys", "Array.isArray",
    "String", "Number", "parseInt", "parseFloat", "isNaN",
}

# methods callable on strings and arrays
METHODS = {
    "push", "pop", "shift", "indexOf", "includes", "slice", "join", "concat", "startsWith",
    "endsWith", "toUpperCase", "toLowerCase", "trim", "split", "charAt", "substring",
    "charCodeAt", "hasOwnProperty", "toString", "reverse",
}

CALLBACK_METHODS = {
    "map", "filter", "forEach", "reduce", "reduceRight", "sort", "find", "findIndex", "some",
    "every", "flatMap",
}

FORBIDDEN_GLOBALS = {"eval": "eval", "Proxy": "Proxy", "Reflect": "Reflect",
                     "Function": "Function constructor", "setTimeout": "timers",
                     "setInterval": "timers", "arguments": "arguments"}

RETURN_LABEL = "$return"

_IDENT = re.compile(r"^[A-Za-z_$][A-Za-z0-9_$]*$")


def _loc(node) -> tuple[int, int]:
    loc = node.get("loc") if isinstance(node, dict) else None
    if loc:
        return loc["start"]["line"], loc["start"]["column"] + 1
    return 0, 0


def _unsupported(construct: str, node) -> UnsupportedFeature:
    return UnsupportedFeature(construct, *_loc(node))


def _number(v):
    if isinstance(v, float) and v.is_integer() and abs(v) < 2**53:
        return int(v)
    return v


# ====================================================================== parse


class _Parser:
    def __init__(self, allow_dollar: bool, permissive: bool = False):
        self.allow_dollar = allow_dollar
        self.permissive = permissive
        self.aliases: set[str] = set()

    # -------------------------------------------------------------- names

    def ident(self, node) -> str:
        if node.get("type") != "Identifier":
            raise _unsupported(f"pattern {node.get('type')}", node)
        name = node["name"]
        if "$" in name and not self.allow_dollar:
            raise ParseError(f"identifier {name!r}: '$' is reserved for generated names",
                             *_loc(node))
        if name in FORBIDDEN_GLOBALS and not (self.permissive and name == "eval"):
            raise _unsupported(FORBIDDEN_GLOBALS[name], node)
        return name

    # ---------------------------------------------------------- statements

    def program(self, tree) -> Program:
        body = []
        for s in tree["body"]:
            body.extend(self.stmt(s, top=True))
        return Program(Block(tuple(body)))

    def stmts(self, nodes) -> tuple:
        out = []
        for s in nodes:
            out.extend(self.stmt(s))
        return tuple(out)

    def one(self, node):
        parts = self.stmt(node)
        if len(parts) == 1:
            return parts[0]
        return Block(tuple(parts))

    def stmt(self, n, top: bool = False) -> list:
        ty = n["type"]
        if ty == "VariableDeclaration":
            out = []
            for d in n["declarations"]:
                init = d.get("init")
                if (init and init["type"] == "CallExpression"
                        and init["callee"]["type"] == "Identifier"
                        and init["callee"]["name"] == "require"):
                    args = init["arguments"]
                    if (len(args) == 1 and args[0]["type"] == "Literal"
                            and args[0]["value"] == "containerless"):
                        self.aliases.add(self.ident(d["id"]))
                        continue
                    raise _unsupported("require", init)
                name = self.ident(d["id"])
                out.append(Let(name, self.expr(init) if init else Const(UNDEFINED)))
            return out
        if ty == "FunctionDeclaration":
            # declarations bind where they appear (no hoisting)
            return [Let(self.ident(n["id"]), self.function(n))]
        if ty == "ExpressionStatement":
            return [self.expr_stmt(n["expression"])]
        if ty == "BlockStatement":
            return [Block(self.stmts(n["body"]))]
        if ty == "IfStatement":
            orelse = self.one(n["alternate"]) if n.get("alternate") else Block(())
            return [If(self.expr(n["test"]), self.one(n["consequent"]), orelse)]
        if ty == "WhileStatement":
            return [While(self.expr(n["test"]), self.one(n["body"]))]
        if ty == "ForStatement":
            init = n.get("init")
            if init is None:
                init_s = None
            elif init["type"] == "VariableDeclaration":
                parts = self.stmt(init)
                init_s = parts[0] if len(parts) == 1 else Block(tuple(parts))
            else:
                init_s = self.expr_stmt(init)
            test = self.expr(n["test"]) if n.get("test") else None
            update = self.expr_stmt(n["update"]) if n.get("update") else None
            return [For(init_s, test, update, self.one(n["body"]))]
        if ty == "LabeledStatement":
            label = self.ident(n["label"])
            return [Labeled(label, self.one(n["body"]))]
        if ty == "BreakStatement":
            return [Break(self.ident(n["label"]) if n.get("label") else None)]
        if ty == "ContinueStatement":
            return [Continue(self.ident(n["label"]) if n.get("label") else None)]
        if ty == "ReturnStatement":
            arg = n.get("argument")
            return [Return(self.expr(arg) if arg else Const(UNDEFINED))]
        if ty == "SwitchStatement":
            cases = []
            for c in n["cases"]:
                test = self.expr(c["test"]) if c.get("test") is not None else None
                cases.append((test, self.stmts(c["consequent"])))
            return [Switch(self.expr(n["discriminant"]), tuple(cases))]
        if ty == "EmptyStatement":
            return []
        names = {
            "TryStatement": "exceptions (try)", "ThrowStatement": "exceptions (throw)",
            "ClassDeclaration": "class", "DoWhileStatement": "do-while",
            "ForInStatement": "for-in", "ForOfStatement": "for-of", "WithStatement": "with",
            "DebuggerStatement": "debugger",
        }
        raise _unsupported(names.get(ty, ty), n)

    def expr_stmt(self, e):
        ty = e["type"]
        if ty == "AssignmentExpression":
            target = self.lval(e["left"])
            value = self.expr(e["right"])
            op = e["operator"]
            if op != "=":
                binop = op[:-1]
                if binop not in BINARY_OPS:
                    raise _unsupported(f"operator {op}", e)
                value = BinOp(binop, _lval_as_expr(target), value)
            return Assign(target, value)
        if ty == "UpdateExpression":
            target = self.lval(e["argument"])
            op = "+" if e["operator"] == "++" else "-"
            return Assign(target, BinOp(op, _lval_as_expr(target), Const(1)))
        if ty == "Literal" and isinstance(e.get("value"), str):
            return ExprStmt(Const(e["value"]))  # directive prologue
        return ExprStmt(self.expr(e))

    def lval(self, n):
        if n["type"] == "Identifier":
            return Name(self.ident(n))
        if n["type"] == "MemberExpression":
            return self.member(n)
        raise _unsupported(f"assignment to {n['type']}", n)

    # ---------------------------------------------------------- expressions

    def function(self, n) -> Function:
        if n.get("async") or n.get("generator"):
            raise _unsupported("async/generator function", n)
        params = tuple(self.ident(p) for p in n["params"])
        if len(set(params)) != len(params):
            raise ParseError("duplicate parameter name", *_loc(n))
        body = n["body"]
        if body["type"] == "BlockStatement":
            return Function(params, Block(self.stmts(body["body"])))
        return Function(params, Block((Return(self.expr(body)),)))

    def member(self, n):
        obj = self.expr(n["object"])
        if n["computed"]:
            return Index(obj, self.expr(n["property"]))
        return Index(obj, Const(n["property"]["name"]))

    def expr(self, n):
        ty = n["type"]
        if ty == "Literal":
            if n.get("regex"):
                raise _unsupported("regular expression", n)
            v = n.get("value")  # the dict form omits a null value
            if isinstance(v, (int, float)) and not isinstance(v, bool):
                v = _number(v)
            return Const(v)
        if ty == "Identifier":
            name = n["name"]
            if name == "undefined":
                return Const(UNDEFINED)
            if name == "NaN":
                return Const(math.nan)
            if name == "Infinity":
                return Const(math.inf)
            return Name(self.ident(n))
        if ty == "BinaryExpression":
            op = n["operator"]
            if op not in BINARY_OPS:
                raise _unsupported(f"operator {op}", n)
            return BinOp(op, self.expr(n["left"]), self.expr(n["right"]))
        if ty == "LogicalExpression":
            op = n["operator"]
            if op not in LOGICAL_OPS:
                raise _unsupported(f"operator {op}", n)
            return BinOp(op, self.expr(n["left"]), self.expr(n["right"]))
        if ty == "UnaryExpression":
            op = n["operator"]
            if op not in UNARY_OPS:
                raise _unsupported(f"operator {op}", n)
            arg = self.expr(n["argument"])
            if op == "-" and isinstance(arg, Const) and isinstance(arg.value, (int, float)) \
                    and not isinstance(arg.value, bool):
                return Const(_number(-arg.value) if arg.value != 0 else -float(arg.value)
                             if isinstance(arg.value, float) else -arg.value)
            return UnOp(op, arg)
        if ty == "ConditionalExpression":
            return Cond(self.expr(n["test"]), self.expr(n["consequent"]),
                        self.expr(n["alternate"]))
        if ty == "MemberExpression":
            return self.member(n)
        if ty == "ArrayExpression":
            items = []
            for el in n["elements"]:
                if el is None or el["type"] == "SpreadElement":
                    raise _unsupported("array hole or spread", n)
                items.append(self.expr(el))
            return ArrayLit(tuple(items))
        if ty == "ObjectExpression":
            fields = []
            for p in n["properties"]:
                if p["type"] != "Property":
                    raise _unsupported("object spread", p)
                if p["kind"] in ("get", "set"):
                    raise _unsupported("getter/setter", p)
                if p.get("method"):
                    raise _unsupported("method definition", p)
                if p["computed"]:
                    raise _unsupported("computed property name", p)
                key = p["key"]
                k = key["name"] if key["type"] == "Identifier" else str(key["value"])
                fields.append((k, self.expr(p["value"])))
            return ObjectLit(tuple(fields))
        if ty in ("FunctionExpression", "ArrowFunctionExpression"):
            return self.function(n)
        if ty == "CallExpression":
            return self.call(n)
        if ty == "TemplateLiteral":
            quasis = n["quasis"]
            out = Const(quasis[0]["value"]["cooked"])
            for e, q in zip(n["expressions"], quasis[1:]):
                out = BinOp("+", out, self.expr(e))
                if q["value"]["cooked"]:
                    out = BinOp("+", out, Const(q["value"]["cooked"]))
            return out
        names = {
            "NewExpression": "new", "ThisExpression": "this", "ClassExpression": "class",
            "AssignmentExpression": "assignment inside an expression",
            "UpdateExpression": "increment inside an expression",
            "SequenceExpression": "comma operator", "AwaitExpression": "await",
            "YieldExpression": "yield", "TaggedTemplateExpression": "tagged template",
        }
        raise _unsupported(names.get(ty, ty), n)

    def call(self, n):
        callee = n["callee"]
        args = n["arguments"]
        for a in args:
            if a["type"] == "SpreadElement":
                raise _unsupported("spread argument", a)
        if callee["type"] == "Identifier":
            name = callee["name"]
            if name == "eval" and self.permissive:
                return PrimCall("eval", tuple(self.expr(a) for a in args))
            if name in FORBIDDEN_GLOBALS:
                raise _unsupported(FORBIDDEN_GLOBALS[name], callee)
            if name == "require":
                raise _unsupported("require", n)
            if name in PRIMITIVES:
                return PrimCall(name, tuple(self.expr(a) for a in args))
            return Call(self.ident(callee), tuple(self.expr(a) for a in args))
        if callee["type"] == "MemberExpression" and not callee["computed"]:
            obj = callee["object"]
            prop = callee["property"]["name"]
            if obj["type"] == "Identifier":
                if obj["name"] in self.aliases:
                    if prop not in BUILTINS:
                        raise _unsupported(f"API function {prop}", callee)
                    return Call(prop, tuple(self.expr(a) for a in args))
                dotted = f"{obj['name']}.{prop}"
                if dotted in PRIMITIVES:
                    return PrimCall(dotted, tuple(self.expr(a) for a in args))
                if obj["name"] in ("Math", "JSON", "Object", "Array", "Promise", "console"):
                    raise _unsupported(dotted, callee)
            if prop in CALLBACK_METHODS:
                raise _unsupported(f"callback method {prop}", callee)
            if prop not in METHODS:
                raise _unsupported(f"method {prop}", callee)
            return MethodCall(self.expr(obj), prop, tuple(self.expr(a) for a in args))
        raise _unsupported("call of a computed callee", n)


def _lval_as_expr(target):
    return target


def parse(source: str, *, allow_dollar: bool = False, permissive: bool = False) -> Program:
    """Parse guest source into a (surface) :class:`Program`.

    ``allow_dollar`` admits identifiers containing ``$``, which are otherwise
    reserved for names generated by :func:`desugar`. ``permissive`` accepts
    ``eval(...)`` calls; such programs can only run in the plain interpreter.
    """
    try:
        tree = esprima.parseScript(source, {"loc": True}).toDict()
    except esprima.Error as e:
        raise ParseError(getattr(e, "description", str(e)),
                         getattr(e, "lineNumber", 0) or 0, getattr(e, "column", 0) or 0) from e
    return _Parser(allow_dollar, permissive).program(tree)


# ====================================================================== print


def _show_const(v) -> str:
    if v is UNDEFINED:
        return "undefined"
    if v is None:
        return "null"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, float):
        if math.isnan(v):
            return "NaN"
        if math.isinf(v):
            return "Infinity" if v > 0 else "-Infinity"
        return repr(v)
    return str(v)


def show_expr(e) -> str:
    if isinstance(e, Const):
        return _show_const(e.value)
    if isinstance(e, Name):
        return e.id
    if isinstance(e, BinOp):
        return f"({show_expr(e.left)} {e.op} {show_expr(e.right)})"
    if isinstance(e, UnOp):
        sep = " " if e.op == "typeof" else ""
        return f"({e.op}{sep}{show_expr(e.operand)})"
    if isinstance(e, Cond):
        return f"({show_expr(e.test)} ? {show_expr(e.then)} : {show_expr(e.orelse)})"
    if isinstance(e, Index):
        k = e.key
        if isinstance(k, Const) and isinstance(k.value, str) and _IDENT.match(k.value):
            return f"{show_expr(e.obj)}.{k.value}"
        return f"{show_expr(e.obj)}[{show_expr(k)}]"
    if isinstance(e, ObjectLit):
        return "({" + ", ".join(f"{json.dumps(k)}: {show_expr(v)}" for k, v in e.fields) + "})"
    if isinstance(e, ArrayLit):
        return "[" + ", ".join(show_expr(v) for v in e.items) + "]"
    if isinstance(e, MethodCall):
        return f"{show_expr(e.obj)}.{e.method}(" + ", ".join(show_expr(a) for a in e.args) + ")"
    if isinstance(e, PrimCall):
        return f"{e.name}(" + ", ".join(show_expr(a) for a in e.args) + ")"
    if isinstance(e, Call):
        return f"{e.callee}(" + ", ".join(show_expr(a) for a in e.args) + ")"
    if isinstance(e, Function):
        return f"function({', '.join(e.params)}) " + show_stmt(e.body, 0)
    raise TypeError(f"not an expression: {e!r}")


def show_stmt(s, indent: int = 0) -> str:
    pad = "  " * indent
    if isinstance(s, Block):
        if not s.body:
            return "{}"
        inner = "\n".join(pad + "  " + show_stmt(x, indent + 1) for x in s.body)
        return "{\n" + inner + "\n" + pad + "}"
    if isinstance(s, Let):
        v = s.value
        if isinstance(v, Function):
            return f"let {s.name} = function({', '.join(v.params)}) {show_stmt(v.body, indent)};"
        return f"let {s.name} = {show_expr(v)};"
    if isinstance(s, Assign):
        return f"{show_expr(s.target)} = {show_expr(s.value)};"
    if isinstance(s, If):
        return (f"if ({show_expr(s.test)}) {show_stmt(s.then, indent)}"
                f" else {show_stmt(s.orelse, indent)}")
    if isinstance(s, While):
        return f"while ({show_expr(s.test)}) {show_stmt(s.body, indent)}"
    if isinstance(s, Labeled):
        return f"{s.label}: {show_stmt(s.body, indent)}"
    if isinstance(s, Break):
        return f"break {s.label};" if s.label else "break;"
    if isinstance(s, Continue):
        return f"continue {s.label};" if s.label else "continue;"
    if isinstance(s, Return):
        return f"return {show_expr(s.value)};"
    if isinstance(s, ExprStmt):
        text = show_expr(s.expr)
        if isinstance(s.expr, Function):
            text = f"({text})"
        return text + ";"
    if isinstance(s, For):
        init = show_stmt(s.init, indent) if s.init else ";"
        if init.endswith("}"):
            raise TypeError("for-loop initialiser must be a single statement")
        test = show_expr(s.test) if s.test else ""
        upd = show_stmt(s.update, indent)[:-1] if s.update else ""
        return f"for ({init} {test}; {upd}) {show_stmt(s.body, indent)}"
    if isinstance(s, Switch):
        lines = [f"switch ({show_expr(s.disc)}) {{"]
        for test, body in s.cases:
            head = f"case {show_expr(test)}:" if test is not None else "default:"
            lines.append(pad + "  " + head)
            for x in body:
                lines.append(pad + "    " + show_stmt(x, indent + 2))
        lines.append(pad + "}")
        return "\n".join(lines)
    raise TypeError(f"not a statement: {s!r}")


def pretty(p: Program) -> str:
    return "\n".join(show_stmt(s) for s in p.body.body) + ("\n" if p.body.body else "")


# ================================================================ JSON dump


def to_json(node):
    """Debug dump: ``{"node": kind, ...fields}`` with dataclass field order."""
    if node is UNDEFINED:
        return {"node": "Undefined"}
    if isinstance(node, tuple):
        return [to_json(x) for x in node]
    if isinstance(node, frozenset):
        return sorted(node)
    if hasattr(node, "__dataclass_fields__"):
        d = {"node": type(node).__name__}
        for f in node.__dataclass_fields__:
            d[f] = to_json(getattr(node, f))
        return d
    if isinstance(node, float) and not math.isfinite(node):
        return repr(node)
    return node


# ================================================================== desugar


class _Fresh:
    """Deterministic fresh names ``base$N`` with one counter per compilation."""

    def __init__(self, taken: set[str]):
        self.taken = taken
        self.counter = 0

    def __call__(self, base: str) -> str:
        base = base.split("$", 1)[0] or "tmp"
        while True:
            self.counter += 1
            name = f"{base}${self.counter}"
            if name not in self.taken:
                self.taken.add(name)
                return name


def _all_names(p: Program) -> set[str]:
    names = set(BUILTINS) | {RETURN_LABEL}
    for n in walk(p):
        if isinstance(n, Name):
            names.add(n.id)
        elif isinstance(n, Let):
            names.add(n.name)
        elif isinstance(n, Function):
            names.update(n.params)
        elif isinstance(n, (Labeled, Break, Continue)) and n.label:
            names.add(n.label)
        elif isinstance(n, Call):
            names.add(n.callee)
    return names


def _has_jump(stmt, kind, through_loops: bool, through_switch: bool) -> bool:
    """Whether ``stmt`` contains an unlabelled break/continue that binds to the
    enclosing construct."""
    if isinstance(stmt, kind) and stmt.label is None:
        return True
    if isinstance(stmt, (While, For)) and not through_loops:
        return False
    if isinstance(stmt, Switch) and not through_switch:
        return False
    if isinstance(stmt, Let) and isinstance(stmt.value, Function):
        return False
    if isinstance(stmt, (Block,)):
        return any(_has_jump(s, kind, through_loops, through_switch) for s in stmt.body)
    if isinstance(stmt, If):
        return (_has_jump(stmt.then, kind, through_loops, through_switch)
                or _has_jump(stmt.orelse, kind, through_loops, through_switch))
    if isinstance(stmt, (While, For, Labeled)):
        return _has_jump(stmt.body, kind, through_loops, through_switch)
    if isinstance(stmt, Switch):
        return any(_has_jump(s, kind, through_loops, through_switch)
                   for _, body in stmt.cases for s in body)
    return False


def _has_labeled_jump(stmt, kind, label) -> bool:
    for n in walk(stmt):
        if isinstance(n, kind) and n.label == label:
            return True
    return False


def _pure(e) -> bool:
    return not any(isinstance(n, (Call, Function)) for n in walk(e))


class _Desugar:
    def __init__(self, fresh: _Fresh):
        self.fresh = fresh
        self.temps: set[str] = set()  # generated names that are never reassigned

    def temp(self, base: str) -> str:
        name = self.fresh(base)
        self.temps.add(name)
        return name

    # ------------------------------------------------- expression lifting

    def lift(self, e, hint: str = "tmp") -> tuple[list, object]:
        """Return ``(pre, e')``: statements binding every call/function inside
        ``e`` (in evaluation order) and the remaining call-free expression."""
        if isinstance(e, (Const, Name)):
            return [], e
        if isinstance(e, Function):
            name = self.temp("F")
            return [Let(name, self.function(e))], Name(name)
        if isinstance(e, Call):
            pre, args = self.lift_seq(e.args)
            r = self.temp(e.callee)
            pre.append(Let(r, Call(e.callee, tuple(args))))
            return pre, Name(r)
        if isinstance(e, BinOp):
            if e.op in LOGICAL_OPS:
                pre, left = self.lift(e.left)
                rpre, right = self.lift(e.right)
                if rpre:
                    raise UnsupportedFeature("call in the right operand of " + e.op)
                return pre, BinOp(e.op, left, right)
            pre, (left, right) = self.lift_seq((e.left, e.right))
            return pre, BinOp(e.op, left, right)
        if isinstance(e, UnOp):
            pre, x = self.lift(e.operand)
            return pre, UnOp(e.op, x)
        if isinstance(e, Cond):
            pre, test = self.lift(e.test)
            p1, then = self.lift(e.then)
            p2, orelse = self.lift(e.orelse)
            if p1 or p2:
                raise UnsupportedFeature("call in a branch of a conditional expression")
            return pre, Cond(test, then, orelse)
        if isinstance(e, Index):
            pre, (obj, key) = self.lift_seq((e.obj, e.key))
            return pre, Index(obj, key)
        if isinstance(e, ObjectLit):
            pre, vals = self.lift_seq(tuple(v for _, v in e.fields))
            return pre, ObjectLit(tuple((k, v) for (k, _), v in zip(e.fields, vals)))
        if isinstance(e, ArrayLit):
            pre, items = self.lift_seq(e.items)
            return pre, ArrayLit(tuple(items))
        if isinstance(e, MethodCall):
            pre, parts = self.lift_seq((e.obj,) + e.args)
            return pre, MethodCall(parts[0], e.method, tuple(parts[1:]))
        if isinstance(e, PrimCall):
            pre, args = self.lift_seq(e.args)
            return pre, PrimCall(e.name, tuple(args))
        raise TypeError(f"not an expression: {e!r}")

    def lift_seq(self, exprs) -> tuple[list, list]:
        lifted = [self.lift(e) for e in exprs]
        last = max((i for i, (pre, _) in enumerate(lifted) if pre), default=-1)
        pre_all: list = []
        out = []
        for i, (pre, e) in enumerate(lifted):
            pre_all.extend(pre)
            if i < last and not isinstance(e, Const) and not (
                    isinstance(e, Name) and e.id in self.temps):
                # keep left-to-right evaluation: snapshot before later calls run
                t = self.fresh("tmp")
                pre_all.append(Let(t, e))
                e = Name(t)
            out.append(e)
        return pre_all, out

    # ---------------------------------------------------------- functions

    def function(self, f: Function) -> Function:
        body = self.block_body(f.body.body, _Ctx())
        return Function(f.params, Block(tuple(body)))

    # ---------------------------------------------------------- statements

    def block_body(self, stmts, ctx) -> list:
        out = []
        for s in stmts:
            out.extend(self.stmt(s, ctx))
        return out

    def stmt(self, s, ctx) -> list:
        if isinstance(s, Let):
            v = s.value
            if isinstance(v, Function):
                return [Let(s.name, self.function(v))]
            if isinstance(v, Call):
                pre, args = self.lift_seq(v.args)
                return pre + [Let(s.name, Call(v.callee, tuple(args)))]
            pre, e = self.lift(v)
            return pre + [Let(s.name, e)]
        if isinstance(s, Assign):
            pre_t, target = self.lift_target(s.target)
            v = s.value
            pre, e = self.lift(v)
            return pre_t + pre + [Assign(target, e)]
        if isinstance(s, ExprStmt):
            e = s.expr
            if isinstance(e, Call):
                pre, args = self.lift_seq(e.args)
                return pre + [Let(self.fresh(e.callee), Call(e.callee, tuple(args)))]
            if isinstance(e, Const):
                return []
            pre, x = self.lift(e)
            if isinstance(x, (Name, Const)):
                return pre
            base = e.method if isinstance(e, MethodCall) else "tmp"
            return pre + [Let(self.fresh(base), x)]
        if isinstance(s, Block):
            return [Block(tuple(self.block_body(s.body, ctx)))]
        if isinstance(s, If):
            pre, test = self.lift(s.test)
            return pre + [If(test, self.single(s.then, ctx), self.single(s.orelse, ctx))]
        if isinstance(s, While):
            return self.loop(s.test, s.body, None, ctx, None)
        if isinstance(s, For):
            out = []
            if s.init is not None:
                out.extend(self.stmt(s.init, ctx))
            test = s.test if s.test is not None else Const(True)
            loop = self.loop(test, s.body, s.update, ctx, None)
            return [Block(tuple(out + loop))]
        if isinstance(s, Labeled):
            if isinstance(s.body, (While, For)):
                body = s.body
                if isinstance(body, While):
                    inner = self.loop(body.test, body.body, None, ctx, s.label)
                else:
                    init = list(self.stmt(body.init, ctx)) if body.init is not None else []
                    test = body.test if body.test is not None else Const(True)
                    inner = init + self.loop(test, body.body, body.update, ctx, s.label)
                    return [Labeled(s.label, Block(tuple(inner)))]
                return [Labeled(s.label, _one(inner))]
            return [Labeled(s.label, self.single(s.body, ctx.with_label(s.label)))]
        if isinstance(s, Break):
            if s.label is None:
                if ctx.brk is None:
                    raise CompileError("break outside of a loop or switch")
                return [Break(ctx.brk)]
            return [s]
        if isinstance(s, Continue):
            label = ctx.cont if s.label is None else ctx.cont_of.get(s.label)
            if label is None:
                raise CompileError("continue outside of a loop")
            return [Break(label)]
        if isinstance(s, Return):
            pre, e = self.lift(s.value)
            return pre + [Return(e)]
        if isinstance(s, Switch):
            return self.switch(s, ctx)
        raise TypeError(f"not a statement: {s!r}")

    def lift_target(self, t):
        if isinstance(t, Name):
            return [], t
        pre, (obj, key) = self.lift_seq((t.obj, t.key))
        return pre, Index(obj, key)

    def single(self, s, ctx):
        return _one(self.stmt(s, ctx))

    def loop(self, test, body, update, ctx, user_label) -> list:
        has_brk = _has_jump(body, Break, False, True)
        has_cont = _has_jump(body, Continue, False, False) or (
            user_label is not None and _has_labeled_jump(body, Continue, user_label))
        brk = self.fresh("brk") if has_brk else None
        cont = self.fresh("cont") if has_cont else None
        inner_ctx = ctx.loop(brk, cont, user_label)
        new_body = self.single(body, inner_ctx)
        if cont is not None:
            new_body = Labeled(cont, new_body if isinstance(new_body, Block)
                               else Block((new_body,)))
        upd = self.stmt(update, ctx) if update is not None else []
        pre, t = self.lift(test)
        if pre:
            brk2 = brk or self.fresh("brk")
            parts = [new_body] + upd
            guarded = If(t, Block(tuple(parts)) if len(parts) > 1 else _block(parts[0]),
                         Block((Break(brk2),)))
            loop = Labeled(brk2, While(Const(True), Block(tuple(pre) + (guarded,))))
            return [loop]
        if update is not None:
            w_body = Block((new_body,) + tuple(upd))
        else:
            w_body = new_body
        loop = While(t, w_body)
        if brk is not None:
            return [Labeled(brk, loop)]
        return [loop]

    def switch(self, s: Switch, ctx) -> list:
        pre, disc = self.lift(s.disc)
        brk = self.fresh("brk") if any(
            _has_jump(Block(_strip_final_break(body)), Break, False, False)
            for _, body in s.cases) else None
        tmp = self.fresh("sw")
        inner_ctx = ctx.switch(brk)
        arms = []  # (tests, body)
        pending = []
        default_body = None
        for i, (test, body) in enumerate(s.cases):
            if test is not None and not _pure(test):
                raise UnsupportedFeature("call in a case label")
            if not body:
                pending.append(test)
                continue
            last = i == len(s.cases) - 1
            if not last and not _terminates(body):
                raise UnsupportedFeature("switch fallthrough")
            stripped = _strip_final_break(body)
            new_body = Block(tuple(self.block_body(stripped, inner_ctx)))
            tests = pending + [test]
            pending = []
            if None in tests:
                default_body = new_body
                tests = [t for t in tests if t is not None]
                if not tests:
                    continue
            arms.append((tests, new_body))
        if None in pending:
            default_body = Block(())
        chain = default_body if default_body is not None else Block(())
        for tests, body in reversed(arms):
            cond = None
            for t in tests:
                c = BinOp("===", Name(tmp), t)
                cond = c if cond is None else BinOp("||", cond, c)
            chain = If(cond, body, chain)
        block = Block(tuple(pre) + (Let(tmp, disc), chain))
        if brk is not None:
            return [Labeled(brk, block)]
        return [block]


def _terminates(body) -> bool:
    return bool(body) and isinstance(body[-1], (Break, Continue, Return))


def _strip_final_break(body) -> tuple:
    if body and isinstance(body[-1], Break) and body[-1].label is None:
        return tuple(body[:-1])
    return tuple(body)


def _one(stmts):
    if len(stmts) == 1:
        return stmts[0]
    return Block(tuple(stmts))


def _block(s):
    return s if isinstance(s, Block) else Block((s,))


class _Ctx:
    def __init__(self, brk=None, cont=None, cont_of=None):
        self.brk = brk
        self.cont = cont
        self.cont_of = cont_of or {}

    def loop(self, brk, cont, user_label):
        cont_of = dict(self.cont_of)
        if user_label is not None:
            cont_of[user_label] = cont
        return _Ctx(brk, cont, cont_of)

    def switch(self, brk):
        return _Ctx(brk, self.cont, self.cont_of)

    def with_label(self, label):
        return self


# ------------------------------------------------------------ alpha renaming


class _Renamer:
    def __init__(self, fresh: _Fresh):
        self.fresh = fresh
        self.used: set[str] = set(BUILTINS)

    def bind(self, name: str, scope: dict) -> str:
        if name not in self.used:
            self.used.add(name)
            new = name
        else:
            new = self.fresh(name)
            self.used.add(new)
        scope[name] = new
        return new

    def expr(self, e, env: list):
        if isinstance(e, Name):
            for scope in reversed(env):
                if e.id in scope:
                    return Name(scope[e.id])
            return e
        if isinstance(e, Const):
            return e
        if isinstance(e, BinOp):
            return BinOp(e.op, self.expr(e.left, env), self.expr(e.right, env))
        if isinstance(e, UnOp):
            return UnOp(e.op, self.expr(e.operand, env))
        if isinstance(e, Cond):
            return Cond(self.expr(e.test, env), self.expr(e.then, env), self.expr(e.orelse, env))
        if isinstance(e, Index):
            return Index(self.expr(e.obj, env), self.expr(e.key, env))
        if isinstance(e, ObjectLit):
            return ObjectLit(tuple((k, self.expr(v, env)) for k, v in e.fields))
        if isinstance(e, ArrayLit):
            return ArrayLit(tuple(self.expr(v, env) for v in e.items))
        if isinstance(e, MethodCall):
            return MethodCall(self.expr(e.obj, env), e.method,
                              tuple(self.expr(a, env) for a in e.args))
        if isinstance(e, PrimCall):
            return PrimCall(e.name, tuple(self.expr(a, env) for a in e.args))
        if isinstance(e, Call):
            callee = self.expr(Name(e.callee), env).id
            return Call(callee, tuple(self.expr(a, env) for a in e.args))
        raise TypeError(f"not an expression: {e!r}")

    def block(self, b: Block, env: list, scope: dict | None = None) -> Block:
        scope = {} if scope is None else scope
        env = env + [scope]
        out = []
        for s in b.body:
            out.append(self.stmt(s, env, scope))
        return Block(tuple(out))

    def stmt(self, s, env, scope):
        if isinstance(s, Let):
            v = s.value
            if isinstance(v, Function):
                new = self.bind(s.name, scope)
                fscope: dict = {}
                params = tuple(self.bind(p, fscope) for p in v.params)
                body = self.block(v.body, env + [fscope])
                return Let(new, Function(params, body))
            v = self.expr(v, env)
            return Let(self.bind(s.name, scope), v)
        if isinstance(s, Assign):
            return Assign(self.expr(s.target, env), self.expr(s.value, env))
        if isinstance(s, Block):
            return self.block(s, env)
        if isinstance(s, If):
            return If(self.expr(s.test, env), self.sub(s.then, env), self.sub(s.orelse, env))
        if isinstance(s, While):
            return While(self.expr(s.test, env), self.sub(s.body, env))
        if isinstance(s, Labeled):
            return Labeled(s.label, self.sub(s.body, env))
        if isinstance(s, (Break,)):
            return s
        if isinstance(s, Return):
            return Return(self.expr(s.value, env))
        raise TypeError(f"not a core statement: {s!r}")

    def sub(self, s, env):
        # a non-block statement in a branch still gets its own scope
        if isinstance(s, Block):
            return self.block(s, env)
        return self.stmt(s, env, {})


def _rename_labels(b: Block, fresh: _Fresh, used: set) -> Block:
    """Make labels unique across the program (labels inside one function body
    must be unique; making them globally unique is simplest)."""

    def go(s, mapping):
        if isinstance(s, Block):
            return Block(tuple(go(x, mapping) for x in s.body))
        if isinstance(s, Let) and isinstance(s.value, Function):
            return Let(s.name, Function(s.value.params, go(s.value.body, {})))
        if isinstance(s, If):
            return If(s.test, go(s.then, mapping), go(s.orelse, mapping))
        if isinstance(s, While):
            return While(s.test, go(s.body, mapping))
        if isinstance(s, Labeled):
            if s.label in used:
                new = fresh(s.label)
            else:
                new = s.label
            used.add(new)
            inner = dict(mapping)
            inner[s.label] = new
            return Labeled(new, go(s.body, inner))
        if isinstance(s, Break):
            if s.label not in mapping:
                raise CompileError(f"break to unknown label {s.label!r}")
            return Break(mapping[s.label])
        return s

    return go(b, {})


# ------------------------------------------------------------------ entry


def _is_core(p: Program) -> bool:
    return not any(isinstance(n, (For, Switch, Continue, ExprStmt)) for n in walk(p))


def desugar(p: Program) -> Program:
    """Reduce a parsed program to the core fragment (idempotent)."""
    fresh = _Fresh(_all_names(p))
    d = _Desugar(fresh)
    body = list(p.body.body)
    body = d.block_body(body, _Ctx())
    # the ``main(req)`` convention registers main as the request handler
    has_main = any(isinstance(s, Let) and s.name == "main" and isinstance(s.value, Function)
                   for s in body)
    calls_listen = any(isinstance(n, Call) and n.callee == "listen" for n in walk(Block(tuple(body))))
    if has_main and not calls_listen:
        body.append(Let(fresh("listen"), Call("listen", (Name("main"),))))
    renamer = _Renamer(fresh)
    block = renamer.block(Block(tuple(body)), [])
    block = _rename_labels(block, fresh, set())
    return Program(block, p.builtins)


def compile_source(source: str) -> Program:
    """Parse and desugar in one step."""
    return desugar(parse(source))


__all__ = ["parse", "desugar", "pretty", "to_json", "compile_source", "show_expr", "show_stmt",
           "RETURN_LABEL", "PRIMITIVES", "METHODS"]
