"""Trigger-action rule extraction from smart apps.

Apps are written in a small declarative automation dialect: a definition
block, preferences with device inputs, lifecycle methods that subscribe to
device attributes, and event handlers that branch on the event value and
call device commands. The extractor follows each subscription into its
handler and turns every conditional branch that reaches a device command
into a trigger-action clause, which is then binarized against a home.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, Optional

from .core import AegisError, HomeDescriptor


class DslSyntaxError(AegisError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class UnsupportedConstructError(AegisError):
    def __init__(self, construct: str, line: int, column: int):
        super().__init__(
            f"line {line}, column {column}: unsupported construct: {construct}"
        )
        self.construct = construct
        self.line = line
        self.column = column


class DanglingHandlerError(AegisError):
    pass


class VocabularyError(AegisError):
    def __init__(self, symbol: str):
        super().__init__(f"no binary mapping for symbolic state {symbol!r}")
        self.symbol = symbol


class ExtractionError(AegisError):
    pass


# Fixed symbolic-state vocabulary used for binarization.
STATE_BITS = {
    "on": 1, "open": 1, "active": 1, "detected": 1, "present": 1, "home": 1,
    "off": 0, "closed": 0, "inactive": 0, "clear": 0, "away": 0,
}

# Complement pairs used to resolve bare else branches on binary triggers.
_COMPLEMENT = {
    "on": "off", "off": "on",
    "open": "closed", "closed": "open",
    "active": "inactive", "inactive": "active",
    "detected": "clear", "clear": "detected",
    "present": "away", "home": "away", "away": "home",
}

_UNSUPPORTED_STATEMENTS = {
    "for": "loop", "while": "loop", "each": "loop",
    "switch": "switch", "try": "try", "return": "return",
}


@dataclass(frozen=True)
class AppSource:
    name: str
    text: str

    def __post_init__(self):
        if not self.name:
            raise ExtractionError("app name must be non-empty")


# ---------------------------------------------------------------------------
# Lexer


@dataclass(frozen=True)
class _Token:
    kind: str  # ident | string | number | punct | eof
    value: str
    line: int
    column: int


_PUNCT = ("==", "&&", "(", ")", "{", "}", ",", ".", ":")


def _lex(text: str) -> list[_Token]:
    tokens = []
    i, line, col = 0, 1, 1
    n = len(text)
    while i < n:
        ch = text[i]
        if ch == "\n":
            i += 1
            line += 1
            col = 1
            continue
        if ch in " \t\r":
            i += 1
            col += 1
            continue
        if text.startswith("//", i):
            while i < n and text[i] != "\n":
                i += 1
            continue
        if text.startswith("/*", i):
            end = text.find("*/", i + 2)
            if end < 0:
                raise DslSyntaxError("unterminated comment", line, col)
            skipped = text[i : end + 2]
            line += skipped.count("\n")
            col = (
                len(skipped) - skipped.rfind("\n") if "\n" in skipped else col + len(skipped)
            )
            i = end + 2
            continue
        if ch == '"':
            j = i + 1
            buf = []
            while j < n and text[j] != '"':
                if text[j] == "\n":
                    raise DslSyntaxError("unterminated string", line, col)
                buf.append(text[j])
                j += 1
            if j >= n:
                raise DslSyntaxError("unterminated string", line, col)
            tokens.append(_Token("string", "".join(buf), line, col))
            col += j + 1 - i
            i = j + 1
            continue
        matched = None
        for p in _PUNCT:
            if text.startswith(p, i):
                matched = p
                break
        if matched:
            tokens.append(_Token("punct", matched, line, col))
            i += len(matched)
            col += len(matched)
            continue
        m = re.match(r"[A-Za-z_][A-Za-z0-9_]*", text[i:])
        if m:
            tokens.append(_Token("ident", m.group(0), line, col))
            i += m.end()
            col += m.end()
            continue
        m = re.match(r"-?\d+(\.\d+)?", text[i:])
        if m:
            tokens.append(_Token("number", m.group(0), line, col))
            i += m.end()
            col += m.end()
            continue
        raise DslSyntaxError(f"unexpected character {ch!r}", line, col)
    tokens.append(_Token("eof", "", line, col))
    return tokens


# ---------------------------------------------------------------------------
# Syntax tree


@dataclass(frozen=True)
class Branch:
    """One conditional arm: tested event value (None for bare else),
    optional time guard, and the device commands it issues."""

    value: Optional[str]
    actions: tuple[tuple[str, str], ...]  # (device var, command)
    guard: Optional[tuple[str, str]] = None


@dataclass(frozen=True)
class Handler:
    name: str
    param: str
    branches: tuple[Branch, ...]
    direct_actions: tuple[tuple[str, str], ...] = ()


@dataclass(frozen=True)
class SyntaxTree:
    name: Optional[str]
    inputs: tuple[tuple[str, str], ...]  # (var, capability)
    subscriptions: tuple[tuple[str, str, str], ...]  # (device var, attribute, handler)
    handlers: tuple[Handler, ...]

    def handler(self, name: str) -> Optional[Handler]:
        for h in self.handlers:
            if h.name == name:
                return h
        return None


class _Parser:
    def __init__(self, tokens: list[_Token]):
        self.tokens = tokens
        self.pos = 0

    def peek(self) -> _Token:
        return self.tokens[self.pos]

    def next(self) -> _Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, kind: str, value: Optional[str] = None) -> _Token:
        tok = self.next()
        if tok.kind != kind or (value is not None and tok.value != value):
            want = value if value is not None else kind
            raise DslSyntaxError(
                f"expected {want!r}, found {tok.value or tok.kind!r}",
                tok.line,
                tok.column,
            )
        return tok

    def at(self, kind: str, value: Optional[str] = None) -> bool:
        tok = self.peek()
        return tok.kind == kind and (value is None or tok.value == value)

    # -- top level ----------------------------------------------------------

    def parse(self) -> SyntaxTree:
        name = None
        inputs: list[tuple[str, str]] = []
        subscriptions: list[tuple[str, str, str]] = []
        handlers: list[Handler] = []
        while not self.at("eof"):
            tok = self.peek()
            if self.at("ident", "definition"):
                name = self._parse_definition() or name
            elif self.at("ident", "preferences"):
                inputs.extend(self._parse_preferences())
            elif self.at("ident", "def"):
                hname, param, branches, subs, direct = self._parse_method()
                subscriptions.extend(s for s in subs if s not in subscriptions)
                if param is not None:
                    handlers.append(Handler(hname, param, tuple(branches), tuple(direct)))
            else:
                raise DslSyntaxError(
                    f"expected definition, preferences or def, found {tok.value!r}",
                    tok.line,
                    tok.column,
                )
        return SyntaxTree(name, tuple(inputs), tuple(subscriptions), tuple(handlers))

    def _parse_definition(self) -> Optional[str]:
        self.expect("ident", "definition")
        self.expect("punct", "(")
        name = None
        while not self.at("punct", ")"):
            key = self.expect("ident")
            self.expect("punct", ":")
            tok = self.next()
            if tok.kind not in ("string", "number", "ident"):
                raise DslSyntaxError("expected a value", tok.line, tok.column)
            if key.value == "name":
                name = tok.value
            if self.at("punct", ","):
                self.next()
        self.expect("punct", ")")
        return name

    def _parse_preferences(self) -> list[tuple[str, str]]:
        self.expect("ident", "preferences")
        self.expect("punct", "{")
        inputs: list[tuple[str, str]] = []
        while not self.at("punct", "}"):
            self.expect("ident", "section")
            self.expect("punct", "(")
            if self.at("string"):
                self.next()
            self.expect("punct", ")")
            self.expect("punct", "{")
            while not self.at("punct", "}"):
                self.expect("ident", "input")
                var = self.expect("string").value
                self.expect("punct", ",")
                capability = self.expect("string").value
                while self.at("punct", ","):
                    self.next()
                    if self.at("punct", "}"):
                        break
                    self.expect("ident")
                    self.expect("punct", ":")
                    self.next()
                inputs.append((var, capability))
            self.expect("punct", "}")
        self.expect("punct", "}")
        return inputs

    def _parse_method(self):
        self.expect("ident", "def")
        name = self.expect("ident").value
        self.expect("punct", "(")
        param = None
        if self.at("ident"):
            param = self.next().value
        self.expect("punct", ")")
        branches: list[Branch] = []
        subscriptions: list[tuple[str, str, str]] = []
        direct: list[tuple[str, str]] = []
        self.expect("punct", "{")
        while not self.at("punct", "}"):
            self._parse_statement(branches, subscriptions, direct)
        self.expect("punct", "}")
        return name, param, branches, subscriptions, direct

    def _parse_statement(self, branches, subscriptions, direct) -> None:
        tok = self.peek()
        if tok.kind != "ident":
            raise DslSyntaxError(
                f"expected a statement, found {tok.value!r}", tok.line, tok.column
            )
        if tok.value in _UNSUPPORTED_STATEMENTS:
            raise UnsupportedConstructError(
                _UNSUPPORTED_STATEMENTS[tok.value], tok.line, tok.column
            )
        if tok.value == "subscribe":
            self.next()
            self.expect("punct", "(")
            device = self.expect("ident").value
            self.expect("punct", ",")
            attribute = self.expect("string").value
            self.expect("punct", ",")
            handler = self.expect("ident").value
            self.expect("punct", ")")
            subscriptions.append((device, attribute, handler))
            return
        if tok.value == "unsubscribe":
            self.next()
            self.expect("punct", "(")
            self.expect("punct", ")")
            return
        if tok.value == "if":
            branches.extend(self._parse_if())
            return
        # device command: ident.command(args?)
        device = self.next().value
        self.expect("punct", ".")
        command = self.expect("ident").value
        self.expect("punct", "(")
        while not self.at("punct", ")"):
            self.next()
        self.expect("punct", ")")
        direct.append((device, command))

    def _parse_if(self) -> list[Branch]:
        branches: list[Branch] = []
        self.expect("ident", "if")
        branches.append(self._parse_arm())
        while self.at("ident", "else"):
            self.next()
            if self.at("ident", "if"):
                self.next()
                branches.append(self._parse_arm())
            else:
                actions = self._parse_action_block()
                branches.append(Branch(None, tuple(actions)))
                break
        return branches

    def _parse_arm(self) -> Branch:
        self.expect("punct", "(")
        self.expect("ident", "event")
        self.expect("punct", ".")
        self.expect("ident", "value")
        self.expect("punct", "==")
        value = self.expect("string").value
        guard = None
        if self.at("punct", "&&"):
            self.next()
            self.expect("ident", "time")
            self.expect("punct", ".")
            self.expect("ident", "between")
            self.expect("punct", "(")
            start = self.expect("string").value
            self.expect("punct", ",")
            end = self.expect("string").value
            self.expect("punct", ")")
            guard = (start, end)
        self.expect("punct", ")")
        actions = self._parse_action_block()
        return Branch(value, tuple(actions), guard)

    def _parse_action_block(self) -> list[tuple[str, str]]:
        actions: list[tuple[str, str]] = []
        self.expect("punct", "{")
        while not self.at("punct", "}"):
            tok = self.peek()
            if tok.kind != "ident":
                raise DslSyntaxError(
                    f"expected a device command, found {tok.value!r}",
                    tok.line,
                    tok.column,
                )
            if tok.value in _UNSUPPORTED_STATEMENTS:
                raise UnsupportedConstructError(
                    _UNSUPPORTED_STATEMENTS[tok.value], tok.line, tok.column
                )
            device = self.next().value
            self.expect("punct", ".")
            command = self.expect("ident").value
            self.expect("punct", "(")
            while not self.at("punct", ")"):
                self.next()
            self.expect("punct", ")")
            actions.append((device, command))
        self.expect("punct", "}")
        return actions


def parse_app(src: AppSource) -> SyntaxTree:
    """Parse app source into a syntax tree; rejects unsupported constructs."""
    return _Parser(_lex(src.text)).parse()


# ---------------------------------------------------------------------------
# Logic extraction


@dataclass(frozen=True)
class TriggerActionLogic:
    """One subscription-to-device flow with its symbolic clauses."""

    trigger: str
    trigger_attribute: str
    action: str
    clauses: tuple[tuple[str, str], ...]  # (trigger state, action command)
    guards: tuple[Optional[tuple[str, str]], ...] = ()

    def __post_init__(self):
        if not self.clauses:
            raise ExtractionError("trigger-action logic needs at least one clause")
        if self.trigger == self.action:
            raise ExtractionError("trigger and action must be distinct devices")
        if len(self.guards) != len(self.clauses):
            object.__setattr__(self, "guards", (None,) * len(self.clauses))


def extract_logic(tree: SyntaxTree) -> list[TriggerActionLogic]:
    """Follow every subscription through its handler's branches and emit one
    logic record per (subscription, actuated device) pair."""
    out: list[TriggerActionLogic] = []
    for device, attribute, handler_name in tree.subscriptions:
        handler = tree.handler(handler_name)
        if handler is None:
            raise DanglingHandlerError(
                f"subscription references undefined handler {handler_name!r}"
            )
        per_device: dict[str, list[tuple[str, str, Optional[tuple[str, str]]]]] = {}
        order: list[str] = []
        last_value: Optional[str] = None
        for branch in handler.branches:
            value = branch.value
            if value is None:
                if last_value is None or last_value not in _COMPLEMENT:
                    raise ExtractionError(
                        f"bare else after non-binary trigger value {last_value!r}"
                    )
                value = _COMPLEMENT[last_value]
            else:
                last_value = value
            for act_device, command in branch.actions:
                if act_device not in per_device:
                    per_device[act_device] = []
                    order.append(act_device)
                per_device[act_device].append((value, command, branch.guard))
        for act_device in order:
            rows = per_device[act_device]
            out.append(
                TriggerActionLogic(
                    trigger=device,
                    trigger_attribute=attribute,
                    action=act_device,
                    clauses=tuple((v, c) for v, c, _ in rows),
                    guards=tuple(g for _, _, g in rows),
                )
            )
    return out


# ---------------------------------------------------------------------------
# Binarization


@dataclass(frozen=True)
class AppClause:
    trigger: str
    trigger_bit: int
    action: str
    action_bit: int
    guard: Optional[tuple[str, str]] = None


@dataclass(frozen=True)
class AppContext:
    """An app's trigger-action rule in binary form."""

    clauses: tuple[AppClause, ...]


def _resolve_entity(var: str, home: HomeDescriptor) -> str:
    if home.has_entity(var):
        return var
    lowered = {e.id.lower(): e.id for e in home.entities}
    if var.lower() in lowered:
        return lowered[var.lower()]
    raise ExtractionError(f"app device {var!r} does not resolve in the home")


def binarize_logic(logic: TriggerActionLogic, home: HomeDescriptor) -> AppContext:
    """Map symbolic clause states to bits via the fixed vocabulary."""
    trigger = _resolve_entity(logic.trigger, home)
    action = _resolve_entity(logic.action, home)
    clauses = []
    for (t_state, a_state), guard in zip(logic.clauses, logic.guards):
        for symbol in (t_state, a_state):
            if symbol not in STATE_BITS:
                raise VocabularyError(symbol)
        clauses.append(
            AppClause(trigger, STATE_BITS[t_state], action, STATE_BITS[a_state], guard)
        )
    return AppContext(tuple(clauses))


# ---------------------------------------------------------------------------
# Display formats


_TRIGGER_LABELS = {
    "contact": "Contact", "motion": "Motion", "presence": "Presence",
    "smoke": "Smoke", "temperature": "Temperature", "switch": "Switch",
    "lock": "Lock", "light": "Switch",
}

_COMMAND_LABELS = {
    "on": "Switch", "off": "Switch", "lock": "Lock", "unlock": "Lock",
    "take": "Camera", "siren": "Alarm", "strobe": "Alarm",
}


def _display_name(label: str, var: str) -> str:
    digits = re.search(r"\d+$", var)
    return label + (digits.group(0) if digits else "")


def format_logic(logic: TriggerActionLogic) -> str:
    """Render trigger-action logic in the report format, e.g.::

        Trigger: Contact1
        Action: Switch1
        Logic 1: contact1 = open, light1 = on
        Logic 2: contact1 = closed, light1 = off
    """
    trig_label = _TRIGGER_LABELS.get(logic.trigger_attribute, logic.trigger_attribute.capitalize())
    first_command = logic.clauses[0][1]
    act_label = _COMMAND_LABELS.get(first_command, first_command.capitalize())
    lines = [
        f"Trigger: {_display_name(trig_label, logic.trigger)}",
        f"Action: {_display_name(act_label, logic.action)}",
    ]
    for i, (t_state, a_state) in enumerate(logic.clauses, start=1):
        lines.append(f"Logic {i}: {logic.trigger} = {t_state}, {logic.action} = {a_state}")
    return "\n".join(lines)


def format_app_context(ctx: AppContext) -> str:
    """Render a binarized app context, e.g.::

        App Context 1: contact1 = 1, light1 = 1
        App Context 2: contact1 = 0, light1 = 0
    """
    lines = []
    for i, c in enumerate(ctx.clauses, start=1):
        lines.append(
            f"App Context {i}: {c.trigger} = {c.trigger_bit}, {c.action} = {c.action_bit}"
        )
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# App context database


class Provenance(str, Enum):
    OFFICIAL = "official"
    USER_SUBMITTED = "user_submitted"


@dataclass
class AppContextDatabase:
    """Named app contexts with provenance; names are unique."""

    _entries: dict[str, tuple[AppContext, Provenance]] = field(default_factory=dict)

    def lookup(self, name: str) -> Optional[AppContext]:
        entry = self._entries.get(name)
        return entry[0] if entry else None

    def insert(
        self,
        name: str,
        ctx: AppContext,
        provenance: Provenance = Provenance.USER_SUBMITTED,
    ) -> None:
        self._entries[name] = (ctx, provenance)

    def remove(self, name: str) -> None:
        self._entries.pop(name, None)

    def names(self) -> list[str]:
        return list(self._entries)

    def items(self) -> Iterator[tuple[str, AppContext]]:
        for name, (ctx, _) in self._entries.items():
            yield name, ctx

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def to_dict(self) -> dict:
        doc = {}
        for name, (ctx, prov) in self._entries.items():
            doc[name] = {
                "provenance": prov.value,
                "clauses": [
                    {
                        "trigger": c.trigger,
                        "trigger_bit": c.trigger_bit,
                        "action": c.action,
                        "action_bit": c.action_bit,
                        **({"guard": list(c.guard)} if c.guard else {}),
                    }
                    for c in ctx.clauses
                ],
            }
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "AppContextDatabase":
        db = cls()
        for name, rec in doc.items():
            clauses = tuple(
                AppClause(
                    trigger=c["trigger"],
                    trigger_bit=c["trigger_bit"],
                    action=c["action"],
                    action_bit=c["action_bit"],
                    guard=tuple(c["guard"]) if "guard" in c else None,
                )
                for c in rec["clauses"]
            )
            db.insert(name, AppContext(clauses), Provenance(rec.get("provenance", "official")))
        return db

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path: str) -> "AppContextDatabase":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def db_lookup(db: AppContextDatabase, name: str) -> Optional[AppContext]:
    """Exact-name lookup; absence signals the caller to run the extractor."""
    return db.lookup(name)


def extract_app(src: AppSource, home: HomeDescriptor) -> list[tuple[TriggerActionLogic, AppContext]]:
    """Full pipeline: parse, extract, and binarize one app against a home."""
    tree = parse_app(src)
    return [(logic, binarize_logic(logic, home)) for logic in extract_logic(tree)]


def merge_contexts(pairs: list[tuple[TriggerActionLogic, AppContext]]) -> AppContext:
    clauses: list[AppClause] = []
    for _, ctx in pairs:
        clauses.extend(ctx.clauses)
    return AppContext(tuple(clauses))


# ---------------------------------------------------------------------------
# Source template for generated rule apps (used by the simulator corpus and
# by tests; mirrors the structure of a hand-written automation app).


def binding_app_source(
    name: str,
    trigger_var: str,
    trigger_capability: str,
    attribute: str,
    action_var: str,
    action_capability: str,
    pairs: tuple[tuple[str, str], ...],
    guard: Optional[tuple[str, str]] = None,
) -> str:
    guard_txt = (
        f' && time.between("{guard[0]}", "{guard[1]}")' if guard is not None else ""
    )
    branches = []
    for i, (value, command) in enumerate(pairs):
        kw = "if" if i == 0 else "} else if"
        branches.append(f'    {kw} (event.value == "{value}"{guard_txt}) {{')
        branches.append(f"        {action_var}.{command}()")
    branches.append("    }")
    body = "\n".join(branches)
    return f"""definition(
    name: "{name}",
    namespace: "aegis",
    author: "generated",
    description: "Auto rule binding {trigger_var} to {action_var}.",
    category: "Convenience",
)
preferences {{
    section("Select the trigger...") {{
        input "{trigger_var}", "capability.{trigger_capability}", title: "Which?"
    }}
    section("Select the device...") {{
        input "{action_var}", "capability.{action_capability}"
    }}
}}
def installed() {{
    subscribe({trigger_var}, "{attribute}", ruleHandler)
}}
def updated() {{
    unsubscribe()
    subscribe({trigger_var}, "{attribute}", ruleHandler)
}}
def ruleHandler(event) {{
{body}
}}
"""
