"""Runtime values and their operations (JavaScript coercion rules).

Both the guest interpreter and the trace executor use these functions, so
the two agree on every operator by construction.

Representation:

=============  ==========================================================
tag            Python value
=============  ==========================================================
number         ``int`` (exact, |n| <= 2**53) or ``float``
boolean        ``bool``
string         ``str``
null           ``None``
undefined      :data:`UNDEFINED`
object         :class:`JSObject` (mutable, shared by reference)
array          :class:`JSArray` (mutable, shared by reference)
function       interpreter closures / executor environments
=============  ==========================================================

Coercion rules for the operators:

* ``-  *  /  %``, unary ``-``/``+`` and the relational operators convert
  number, boolean, null, undefined and string operands with ToNumber
  (``true`` is 1, ``null`` is 0, ``undefined`` is NaN, strings are parsed).
  An object, array or function operand is a type error.
* ``+`` concatenates when either operand is a string (the other operand is
  converted with ToString) and adds numerically otherwise. Objects, arrays
  and functions are type errors.
* ``<  >  <=  >=`` compare strings lexicographically when both operands are
  strings, numerically otherwise (NaN compares false).
* ``===``/``!==`` compare tag and value; objects compare by identity.
* ``==``/``!=``: null and undefined equal each other only; number/string/
  boolean pairs are compared after ToNumber; objects compare by identity and
  never equal a primitive.
"""

from __future__ import annotations

import json
import math
import re
from decimal import Decimal

from .errors import DynTypeError, MemoryLimit
from .syntax import UNDEFINED

MAX_SAFE = 2**53


class JSObject:
    __slots__ = ("props",)

    def __init__(self, props: dict | None = None):
        self.props = {} if props is None else props

    def __repr__(self) -> str:
        return f"JSObject({self.props!r})"


class JSArray:
    __slots__ = ("items",)

    def __init__(self, items: list | None = None):
        self.items = [] if items is None else items

    def __repr__(self) -> str:
        return f"JSArray({self.items!r})"


class FunctionValue:
    """Marker base for callable guest values (closures, environments)."""

    __slots__ = ()


class Builtin(FunctionValue):
    """One of the platform functions (``get``, ``post``, ``respond``, ``listen``)."""

    __slots__ = ("name",)

    def __init__(self, name: str):
        self.name = name

    def __repr__(self) -> str:
        return f"<builtin {self.name}>"


# ------------------------------------------------------------------ heap

CELL_BYTES = 16
OBJECT_BYTES = 64
PROP_BYTES = 32
ARRAY_BYTES = 56
ITEM_BYTES = 8
STRING_BYTES = 49


class Heap:
    """Allocation accounting. ``limit`` of ``None`` means unbounded."""

    def __init__(self, limit: int | None = None):
        self.limit = limit
        self.used = 0
        self.peak = 0

    def charge(self, n: int) -> None:
        used = self.used + n
        if self.limit is not None and used > self.limit:
            raise MemoryLimit(f"memory limit of {self.limit} bytes exceeded")
        self.used = used
        if used > self.peak:
            self.peak = used

    def new_object(self, props: dict | None = None) -> JSObject:
        props = {} if props is None else props
        self.charge(OBJECT_BYTES + PROP_BYTES * len(props))
        return JSObject(props)

    def new_array(self, items: list | None = None) -> JSArray:
        items = [] if items is None else items
        self.charge(ARRAY_BYTES + ITEM_BYTES * len(items))
        return JSArray(items)

    def new_string(self, s: str) -> str:
        self.charge(STRING_BYTES + len(s))
        return s


# --------------------------------------------------------------- numbers


def num(x):
    """Canonical number: integral floats become ints when exactly representable."""
    if isinstance(x, float):
        if x.is_integer() and abs(x) <= MAX_SAFE and not (x == 0 and math.copysign(1, x) < 0):
            return int(x)
        return x
    if abs(x) > MAX_SAFE:
        return float(x)
    return x


def is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def type_tag(v) -> str:
    if v is UNDEFINED:
        return "undefined"
    if v is None:
        return "null"
    if isinstance(v, bool):
        return "boolean"
    if isinstance(v, (int, float)):
        return "number"
    if isinstance(v, str):
        return "string"
    if isinstance(v, JSArray):
        return "array"
    if isinstance(v, JSObject):
        return "object"
    return "function"


def typeof(v) -> str:
    t = type_tag(v)
    if t in ("null", "array"):
        return "object"
    return t


_NUM_RE = re.compile(r"^[+-]?(\d+\.?\d*([eE][+-]?\d+)?|\.\d+([eE][+-]?\d+)?)$")


def str_to_number(s: str):
    s = s.strip()
    if s == "":
        return 0
    if s in ("Infinity", "+Infinity"):
        return math.inf
    if s == "-Infinity":
        return -math.inf
    low = s.lower()
    if low.startswith(("0x", "0o", "0b")) and len(s) > 2:
        try:
            return num(int(s, 0))
        except ValueError:
            return math.nan
    if _NUM_RE.match(s):
        return num(float(s))
    return math.nan


def to_number(v):
    if isinstance(v, bool):
        return 1 if v else 0
    if isinstance(v, (int, float)):
        return v
    if v is None:
        return 0
    if v is UNDEFINED:
        return math.nan
    if isinstance(v, str):
        return str_to_number(v)
    raise DynTypeError(f"cannot convert {type_tag(v)} to a number")


def number_to_string(x) -> str:
    if isinstance(x, int):
        return str(x)
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    if x == 0:
        return "0"
    if x.is_integer() and abs(x) < 1e21:
        return str(int(x))
    sign = "-" if x < 0 else ""
    d = Decimal(repr(abs(x))).normalize()
    _, digits, exp = d.as_tuple()
    ds = "".join(map(str, digits))
    k = len(ds)
    n = exp + k  # position of the decimal point
    if k <= n <= 21:
        return sign + ds + "0" * (n - k)
    if 0 < n <= 21:
        return sign + ds[:n] + "." + ds[n:]
    if -6 < n <= 0:
        return sign + "0." + "0" * (-n) + ds
    e = n - 1
    es = f"+{e}" if e >= 0 else str(e)
    if k == 1:
        return sign + ds + "e" + es
    return sign + ds[0] + "." + ds[1:] + "e" + es


def to_string(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return number_to_string(v)
    if v is None:
        return "null"
    if v is UNDEFINED:
        return "undefined"
    if isinstance(v, JSArray):
        return ",".join("" if x is None or x is UNDEFINED else to_string(x) for x in v.items)
    if isinstance(v, JSObject):
        return "[object Object]"
    return "function"


def truthy(v) -> bool:
    if isinstance(v, bool):
        return v
    if isinstance(v, (int, float)):
        return not (v == 0 or (isinstance(v, float) and math.isnan(v)))
    if isinstance(v, str):
        return v != ""
    if v is None or v is UNDEFINED:
        return False
    return True


def _primitive(v) -> bool:
    return v is None or v is UNDEFINED or isinstance(v, (bool, int, float, str))


def _arith_operand(v, op):
    if not _primitive(v):
        raise DynTypeError(f"operator {op} applied to {type_tag(v)}")
    return to_number(v)


# -------------------------------------------------------------- operators


def add(a, b, heap: Heap | None = None):
    if isinstance(a, int) and isinstance(b, int) and not isinstance(a, bool) \
            and not isinstance(b, bool):
        return num(a + b)
    if not _primitive(a) or not _primitive(b):
        raise DynTypeError(f"operator + applied to {type_tag(a)} and {type_tag(b)}")
    if isinstance(a, str) or isinstance(b, str):
        s = to_string(a) + to_string(b)
        if heap is not None:
            heap.new_string(s)
        return s
    return _arith(to_number(a), to_number(b), "+")


def _arith(x, y, op):
    if op == "+":
        r = x + y
    elif op == "-":
        r = x - y
    elif op == "*":
        if isinstance(x, int) and isinstance(y, int):
            return num(x * y)
        r = float(x) * float(y)
    elif op == "/":
        fx, fy = float(x), float(y)
        if fy == 0:
            if fx == 0 or math.isnan(fx):
                return math.nan
            return math.copysign(math.inf, fx) * math.copysign(1, fy)
        r = fx / fy
    elif op == "%":
        fx, fy = float(x), float(y)
        if fy == 0 or math.isinf(fx) or math.isnan(fx) or math.isnan(fy):
            return math.nan
        if math.isinf(fy):
            return x
        if isinstance(x, int) and isinstance(y, int):
            r = abs(x) % abs(y)
            if x < 0:
                return -r if r else -0.0
            return r
        r = math.fmod(fx, fy)
    else:
        raise DynTypeError(f"unknown operator {op}")
    if isinstance(r, float) and math.isnan(r):
        return r
    return num(r)


def arith(op: str, a, b):
    if type(a) is int and type(b) is int and op in ("-", "*"):
        return num(a - b if op == "-" else a * b)
    return _arith(_arith_operand(a, op), _arith_operand(b, op), op)


def compare(op: str, a, b) -> bool:
    if isinstance(a, str) and isinstance(b, str):
        x, y = a, b
    else:
        x, y = _arith_operand(a, op), _arith_operand(b, op)
        if (isinstance(x, float) and math.isnan(x)) or (isinstance(y, float) and math.isnan(y)):
            return False
    if op == "<":
        return x < y
    if op == ">":
        return x > y
    if op == "<=":
        return x <= y
    return x >= y


def strict_equals(a, b) -> bool:
    ta, tb = type_tag(a), type_tag(b)
    if ta != tb:
        return False
    if ta == "number":
        return a == b  # NaN != NaN
    if ta in ("object", "array", "function"):
        return a is b
    return a == b


def loose_equals(a, b) -> bool:
    ta, tb = type_tag(a), type_tag(b)
    if ta == tb:
        return strict_equals(a, b)
    nullish = ("null", "undefined")
    if ta in nullish or tb in nullish:
        return ta in nullish and tb in nullish
    prim = ("number", "string", "boolean")
    if ta in prim and tb in prim:
        return to_number(a) == to_number(b)
    if ta not in prim and tb not in prim:
        return a is b
    # object against primitive needs ToPrimitive, which is not supported
    raise DynTypeError(f"operator == applied to {ta} and {tb}")


def binop(op: str, a, b, heap: Heap | None = None):
    """Apply a non-short-circuit binary operator."""
    if op == "+":
        return add(a, b, heap)
    if op in ("-", "*", "/", "%"):
        return arith(op, a, b)
    if op in ("<", ">", "<=", ">="):
        return compare(op, a, b)
    if op == "===":
        return strict_equals(a, b)
    if op == "!==":
        return not strict_equals(a, b)
    if op == "==":
        return loose_equals(a, b)
    if op == "!=":
        return not loose_equals(a, b)
    raise DynTypeError(f"unknown operator {op}")


def unop(op: str, v):
    if op == "!":
        return not truthy(v)
    if op == "-":
        x = _arith_operand(v, op)
        if isinstance(x, int):
            return -x if x != 0 else -0.0
        return num(-x)
    if op == "+":
        return _arith_operand(v, op)
    if op == "typeof":
        return typeof(v)
    raise DynTypeError(f"unknown operator {op}")


# ------------------------------------------------------ property access


_INDEX_RE = re.compile(r"^(0|[1-9]\d*)$")


def to_key(k) -> str:
    if isinstance(k, str):
        return k
    if isinstance(k, (bool, int, float)) or k is None or k is UNDEFINED:
        return to_string(k)
    raise DynTypeError(f"cannot use {type_tag(k)} as a property key")


def _array_index(k):
    """Integer index named by ``k`` or ``None``."""
    if isinstance(k, bool):
        return None
    if isinstance(k, int):
        return k if k >= 0 else None
    if isinstance(k, float):
        return None
    if isinstance(k, str) and _INDEX_RE.match(k) and len(k) < 16:
        return int(k)
    return None


def own_keys(o: JSObject) -> list:
    ints = sorted((int(k), k) for k in o.props if _INDEX_RE.match(k) and len(k) < 16)
    int_keys = [k for _, k in ints]
    seen = set(int_keys)
    return int_keys + [k for k in o.props if k not in seen]


def get_index(obj, key):
    if isinstance(obj, JSObject):
        return obj.props.get(to_key(key), UNDEFINED)
    if isinstance(obj, JSArray):
        i = _array_index(key)
        if i is not None:
            return obj.items[i] if i < len(obj.items) else UNDEFINED
        if to_key(key) == "length":
            return len(obj.items)
        return UNDEFINED
    if isinstance(obj, str):
        i = _array_index(key)
        if i is not None:
            return obj[i] if i < len(obj) else UNDEFINED
        if to_key(key) == "length":
            return len(obj)
        return UNDEFINED
    if obj is None or obj is UNDEFINED:
        raise DynTypeError(f"cannot read property {to_key(key)!r} of {to_string(obj)}")
    return UNDEFINED


def set_index(obj, key, value, heap: Heap | None = None) -> None:
    if isinstance(obj, JSObject):
        k = to_key(key)
        if heap is not None and k not in obj.props:
            heap.charge(PROP_BYTES)
        obj.props[k] = value
        return
    if isinstance(obj, JSArray):
        i = _array_index(key)
        if i is not None:
            n = len(obj.items)
            if i >= n:
                if heap is not None:
                    heap.charge(ITEM_BYTES * (i + 1 - n))
                obj.items.extend([UNDEFINED] * (i + 1 - n))
            obj.items[i] = value
            return
        if to_key(key) == "length":
            n = to_number(value)
            if not isinstance(n, int) or n < 0:
                raise DynTypeError("invalid array length")
            if n < len(obj.items):
                del obj.items[n:]
            else:
                if heap is not None:
                    heap.charge(ITEM_BYTES * (n - len(obj.items)))
                obj.items.extend([UNDEFINED] * (n - len(obj.items)))
            return
        raise DynTypeError(f"cannot set property {to_key(key)!r} of an array")
    raise DynTypeError(f"cannot set property {to_key(key)!r} of {type_tag(obj)}")


# ------------------------------------------------------------- methods


def _int_arg(args, i, default):
    if i >= len(args) or args[i] is UNDEFINED:
        return default
    x = to_number(args[i])
    if isinstance(x, float):
        if math.isnan(x):
            return 0
        if math.isinf(x):
            return MAX_SAFE if x > 0 else -MAX_SAFE
        return int(x)
    return x


def _rel_index(i, n):
    if i < 0:
        return max(n + i, 0)
    return min(i, n)


def call_method(obj, name: str, args: list, heap: Heap):
    if isinstance(obj, JSArray):
        return _array_method(obj, name, args, heap)
    if isinstance(obj, str):
        return _string_method(obj, name, args, heap)
    if isinstance(obj, JSObject):
        if name == "hasOwnProperty":
            return to_key(args[0] if args else UNDEFINED) in obj.props
        if name == "toString":
            return "[object Object]"
    if is_number(obj) and name == "toString":
        return heap.new_string(number_to_string(obj))
    if isinstance(obj, bool) and name == "toString":
        return to_string(obj)
    raise DynTypeError(f"{type_tag(obj)} has no method {name}")


def _array_method(a: JSArray, name, args, heap):
    items = a.items
    if name == "push":
        heap.charge(ITEM_BYTES * len(args))
        items.extend(args)
        return len(items)
    if name == "pop":
        return items.pop() if items else UNDEFINED
    if name == "shift":
        return items.pop(0) if items else UNDEFINED
    if name == "indexOf":
        target = args[0] if args else UNDEFINED
        for i, x in enumerate(items):
            if strict_equals(x, target):
                return i
        return -1
    if name == "includes":
        target = args[0] if args else UNDEFINED
        for x in items:
            if strict_equals(x, target) or (is_number(x) and is_number(target)
                                            and math.isnan(x) and math.isnan(target)):
                return True
        return False
    if name == "slice":
        n = len(items)
        start = _rel_index(_int_arg(args, 0, 0), n)
        end = _rel_index(_int_arg(args, 1, n), n)
        return heap.new_array(items[start:end])
    if name == "join":
        sep = "," if not args or args[0] is UNDEFINED else to_string(args[0])
        return heap.new_string(sep.join("" if x is None or x is UNDEFINED else to_string(x)
                                        for x in items))
    if name == "concat":
        out = list(items)
        for x in args:
            if isinstance(x, JSArray):
                out.extend(x.items)
            else:
                out.append(x)
        return heap.new_array(out)
    if name == "reverse":
        items.reverse()
        return a
    if name == "toString":
        return heap.new_string(to_string(a))
    raise DynTypeError(f"array has no method {name}")


def _string_method(s: str, name, args, heap):
    if name == "indexOf":
        return s.find(to_string(args[0]) if args else "undefined", max(_int_arg(args, 1, 0), 0))
    if name == "includes":
        return (to_string(args[0]) if args else "undefined") in s
    if name == "startsWith":
        return s.startswith(to_string(args[0]) if args else "undefined",
                            min(max(_int_arg(args, 1, 0), 0), len(s)))
    if name == "endsWith":
        return s.endswith(to_string(args[0]) if args else "undefined")
    if name in ("toUpperCase", "toLowerCase", "trim", "toString"):
        r = {"toUpperCase": s.upper, "toLowerCase": s.lower, "trim": s.strip,
             "toString": lambda: s}[name]()
        return heap.new_string(r)
    if name == "slice":
        n = len(s)
        start = _rel_index(_int_arg(args, 0, 0), n)
        end = _rel_index(_int_arg(args, 1, n), n)
        return heap.new_string(s[start:end])
    if name == "substring":
        n = len(s)
        start = min(max(_int_arg(args, 0, 0), 0), n)
        end = min(max(_int_arg(args, 1, n), 0), n)
        if start > end:
            start, end = end, start
        return heap.new_string(s[start:end])
    if name == "charAt":
        i = _int_arg(args, 0, 0)
        return s[i] if 0 <= i < len(s) else ""
    if name == "charCodeAt":
        i = _int_arg(args, 0, 0)
        return ord(s[i]) if 0 <= i < len(s) else math.nan
    if name == "split":
        if not args or args[0] is UNDEFINED:
            parts = [s]
        else:
            sep = to_string(args[0])
            parts = list(s) if sep == "" else s.split(sep)
        heap.charge(sum(STRING_BYTES + len(p) for p in parts))
        return heap.new_array(parts)
    if name == "concat":
        return heap.new_string(s + "".join(to_string(x) for x in args))
    raise DynTypeError(f"string has no method {name}")


# ---------------------------------------------------------- primitives


def _math1(f):
    def go(args, heap):
        x = to_number(args[0]) if args else math.nan
        if isinstance(x, float) and (math.isnan(x) or math.isinf(x)):
            return x
        return num(f(x))
    return go


def _round(x):
    return math.floor(x + 0.5)


def _sqrt(args, heap):
    x = float(to_number(args[0])) if args else math.nan
    if math.isnan(x) or x < 0:
        return math.nan
    return num(math.sqrt(x))


def _minmax(pick, empty):
    def go(args, heap):
        xs = [to_number(a) for a in args]
        if any(isinstance(x, float) and math.isnan(x) for x in xs):
            return math.nan
        return pick(xs) if xs else empty
    return go


def _pow(args, heap):
    x = to_number(args[0]) if args else math.nan
    y = to_number(args[1]) if len(args) > 1 else math.nan
    try:
        if isinstance(x, int) and isinstance(y, int) and y >= 0:
            r = x ** y
            return num(r) if abs(r) <= MAX_SAFE else float(r)
        return num(math.pow(x, y))
    except (OverflowError, ValueError):
        return math.nan


def _parse_int(args, heap):
    s = to_string(args[0]) if args else "undefined"
    radix = _int_arg(args, 1, 10) or 10
    s = s.strip()
    sign = 1
    if s[:1] in "+-" and s:
        sign = -1 if s[0] == "-" else 1
        s = s[1:]
    if radix == 16 and s.lower().startswith("0x"):
        s = s[2:]
    elif radix == 10 and s.lower().startswith("0x") and (len(args) < 2 or args[1] is UNDEFINED):
        s, radix = s[2:], 16
    digits = "0123456789abcdefghijklmnopqrstuvwxyz"[:radix]
    i = 0
    while i < len(s) and s[i].lower() in digits:
        i += 1
    if i == 0:
        return math.nan
    return num(sign * int(s[:i], radix))


def _parse_float(args, heap):
    s = to_string(args[0]) if args else "undefined"
    m = re.match(r"^\s*[+-]?(Infinity|\d+\.?\d*([eE][+-]?\d+)?|\.\d+([eE][+-]?\d+)?)", s)
    if not m:
        return math.nan
    return str_to_number(m.group(0))


def _object_keys(args, heap):
    o = args[0] if args else UNDEFINED
    if isinstance(o, JSObject):
        keys = own_keys(o)
    elif isinstance(o, JSArray):
        keys = [str(i) for i in range(len(o.items))]
    elif isinstance(o, str):
        keys = [str(i) for i in range(len(o))]
    elif o is None or o is UNDEFINED:
        raise DynTypeError("Object.keys called on null or undefined")
    else:
        keys = []
    return heap.new_array(keys)


def _stringify(args, heap):
    v = args[0] if args else UNDEFINED
    s = json_stringify(v)
    if s is None:
        return UNDEFINED
    return heap.new_string(s)


def _parse(args, heap):
    text = to_string(args[0]) if args else "undefined"
    try:
        doc = json.loads(text)
    except (json.JSONDecodeError, RecursionError) as e:
        raise DynTypeError(f"JSON.parse: {e}") from None
    return from_json(doc, heap)


PRIMITIVE_IMPLS = {
    "Math.floor": _math1(math.floor),
    "Math.ceil": _math1(math.ceil),
    "Math.round": _math1(_round),
    "Math.trunc": _math1(math.trunc),
    "Math.abs": _math1(abs),
    "Math.sqrt": _sqrt,
    "Math.pow": _pow,
    "Math.min": _minmax(min, math.inf),
    "Math.max": _minmax(max, -math.inf),
    "JSON.stringify": _stringify,
    "JSON.parse": _parse,
    "Object.keys": _object_keys,
    "Array.isArray": lambda args, heap: bool(args) and isinstance(args[0], JSArray),
    "String": lambda args, heap: heap.new_string(to_string(args[0])) if args else "",
    "Number": lambda args, heap: to_number(args[0]) if args else 0,
    "parseInt": _parse_int,
    "parseFloat": _parse_float,
    "isNaN": lambda args, heap: isinstance(x := to_number(args[0] if args else UNDEFINED),
                                           float) and math.isnan(x),
}


def call_primitive(name: str, args: list, heap: Heap):
    try:
        f = PRIMITIVE_IMPLS[name]
    except KeyError:
        raise DynTypeError(f"unknown primitive {name}") from None
    return f(args, heap)


# ----------------------------------------------------------------- JSON


def from_json(doc, heap: Heap):
    """Convert a decoded JSON document into guest values (allocating on ``heap``)."""
    if isinstance(doc, dict):
        return heap.new_object({k: from_json(v, heap) for k, v in doc.items()})
    if isinstance(doc, list):
        return heap.new_array([from_json(v, heap) for v in doc])
    if isinstance(doc, float):
        return num(doc)
    if isinstance(doc, int) and not isinstance(doc, bool):
        return num(doc)
    if isinstance(doc, str):
        heap.charge(STRING_BYTES + len(doc))
    return doc


def _json_value(v, stack):
    """Python JSON-encodable form, or ``_SKIP`` where JSON.stringify omits."""
    if v is None:
        return None
    if isinstance(v, bool) or isinstance(v, str):
        return v
    if isinstance(v, (int, float)):
        if isinstance(v, float) and not math.isfinite(v):
            return None
        return _JSNum(v)
    if v is UNDEFINED:
        return _SKIP
    if isinstance(v, (JSObject, JSArray)):
        if any(v is s for s in stack):
            raise DynTypeError("JSON.stringify: cyclic structure")
        stack.append(v)
        try:
            if isinstance(v, JSArray):
                out = []
                for x in v.items:
                    j = _json_value(x, stack)
                    out.append(None if j is _SKIP else j)
                return out
            d = {}
            for k in own_keys(v):
                j = _json_value(v.props[k], stack)
                if j is not _SKIP:
                    d[k] = j
            return d
        finally:
            stack.pop()
    return _SKIP  # functions


class _JSNum:
    __slots__ = ("v",)

    def __init__(self, v):
        self.v = v


_SKIP = object()


def _encode(j, out: list):
    if j is None:
        out.append("null")
    elif j is True:
        out.append("true")
    elif j is False:
        out.append("false")
    elif isinstance(j, str):
        out.append(json.dumps(j, ensure_ascii=False))
    elif isinstance(j, _JSNum):
        out.append(number_to_string(j.v))
    elif isinstance(j, list):
        out.append("[")
        for i, x in enumerate(j):
            if i:
                out.append(",")
            _encode(x, out)
        out.append("]")
    else:
        out.append("{")
        for i, (k, x) in enumerate(j.items()):
            if i:
                out.append(",")
            out.append(json.dumps(k, ensure_ascii=False))
            out.append(":")
            _encode(x, out)
        out.append("}")


def json_stringify(v) -> str | None:
    """``JSON.stringify`` without indentation; ``None`` when the result is undefined."""
    j = _json_value(v, [])
    if j is _SKIP:
        return None
    out: list = []
    _encode(j, out)
    return "".join(out)


def encode_response(v) -> tuple[bytes, str]:
    """Body bytes and content type for a value passed to ``respond``."""
    if isinstance(v, str):
        return v.encode(), "text/plain; charset=utf-8"
    s = json_stringify(v)
    return (s or "").encode(), "application/json"


def decode_body(raw: bytes | str, heap: Heap):
    """Guest value for an HTTP body: parsed JSON when possible, else text."""
    if isinstance(raw, bytes):
        try:
            raw = raw.decode()
        except UnicodeDecodeError:
            raw = raw.decode("latin-1")
    if raw == "":
        return UNDEFINED
    try:
        doc = json.loads(raw)
    except (json.JSONDecodeError, RecursionError):
        return heap.new_string(raw)
    return from_json(doc, heap)
