import pytest

from aegis.apps import (
    AppContext,
    AppContextDatabase,
    AppSource,
    DanglingHandlerError,
    DslSyntaxError,
    ExtractionError,
    Provenance,
    UnsupportedConstructError,
    VocabularyError,
    binarize_logic,
    binding_app_source,
    db_lookup,
    extract_app,
    extract_logic,
    format_app_context,
    format_logic,
    parse_app,
)
from conftest import SMART_LIGHT_APP


def _src(text, name="test-app"):
    return AppSource(name, text)


# -- parsing -------------------------------------------------------------------


def test_parse_sample_app_shape():
    tree = parse_app(_src(SMART_LIGHT_APP))
    assert tree.name == "Smart Light App"
    assert len(tree.subscriptions) == 1  # installed() and updated() overlap
    assert tree.subscriptions[0] == ("contact1", "contact", "contactHandler")
    assert len(tree.handlers) == 1
    assert len(tree.handlers[0].branches) == 2
    assert dict(tree.inputs) == {
        "contact1": "capability.contactSensor",
        "light1": "capability.light",
    }


def test_parse_empty_handler_has_no_branches():
    text = """
definition( name: "noop" )
def installed() { subscribe(s1, "motion", h) }
def h(event) { }
"""
    tree = parse_app(_src(text))
    assert tree.handlers[0].branches == ()


def test_loop_constructs_rejected_by_name():
    text = """
def h(event) { for (x) { light1.on() } }
"""
    with pytest.raises(UnsupportedConstructError) as err:
        parse_app(_src(text))
    assert "unsupported construct: loop" in str(err.value)
    assert err.value.line == 2


def test_switch_construct_rejected():
    with pytest.raises(UnsupportedConstructError) as err:
        parse_app(_src('def h(event) { switch (event.value) { } }'))
    assert err.value.construct == "switch"


def test_syntax_error_carries_position():
    with pytest.raises(DslSyntaxError) as err:
        parse_app(_src('definition( name "missing colon" )'))
    assert err.value.line == 1
    assert err.value.column > 1


def test_unterminated_comment_rejected():
    with pytest.raises(DslSyntaxError):
        parse_app(_src("/* never closed"))


# -- extraction -------------------------------------------------------------------


def test_extract_sample_app_logic():
    logic = extract_logic(parse_app(_src(SMART_LIGHT_APP)))
    assert len(logic) == 1
    rule = logic[0]
    assert rule.trigger == "contact1"
    assert rule.action == "light1"
    assert rule.clauses == (("open", "on"), ("closed", "off"))


def test_extract_handler_without_actuation_is_empty():
    text = """
def installed() { subscribe(s1, "motion", h) }
def h(event) { }
"""
    assert extract_logic(parse_app(_src(text))) == []


def test_extract_one_subscription_driving_two_devices():
    # data flow traced by hand: both branches reach light1, only the first
    # reaches siren1, so two records come out in first-touch order
    text = """
def installed() { subscribe(s1, "motion", h) }
def h(event) {
    if (event.value == "active") { light1.on()
        siren1.on() }
    else if (event.value == "inactive") { light1.off() }
}
"""
    rules = extract_logic(parse_app(_src(text)))
    assert [(r.trigger, r.action) for r in rules] == [("s1", "light1"), ("s1", "siren1")]
    assert rules[0].clauses == (("active", "on"), ("inactive", "off"))
    assert rules[1].clauses == (("active", "on"),)


def test_extract_dangling_handler():
    with pytest.raises(DanglingHandlerError):
        extract_logic(parse_app(_src('def installed() { subscribe(s1, "motion", nope) }')))


def test_bare_else_binds_complement_of_tested_value():
    text = """
def installed() { subscribe(c1, "contact", h) }
def h(event) {
    if (event.value == "open") { light1.on() }
    else { light1.off() }
}
"""
    rules = extract_logic(parse_app(_src(text)))
    assert rules[0].clauses == (("open", "on"), ("closed", "off"))


def test_bare_else_rejected_for_non_binary_value():
    text = """
def installed() { subscribe(c1, "contact", h) }
def h(event) {
    if (event.value == "dim") { light1.on() }
    else { light1.off() }
}
"""
    with pytest.raises(ExtractionError):
        extract_logic(parse_app(_src(text)))


def test_extraction_is_deterministic():
    rules1 = extract_logic(parse_app(_src(SMART_LIGHT_APP)))
    rules2 = extract_logic(parse_app(_src(SMART_LIGHT_APP)))
    assert rules1 == rules2


def test_time_guard_attached_to_clauses():
    text = """
def installed() { subscribe(m1, "motion", h) }
def h(event) {
    if (event.value == "active" && time.between("18:00", "06:00")) { light1.on() }
}
"""
    rules = extract_logic(parse_app(_src(text)))
    assert rules[0].guards == (("18:00", "06:00"),)


# -- binarization --------------------------------------------------------------


def test_binarize_sample_app(golden_home):
    rules = extract_logic(parse_app(_src(SMART_LIGHT_APP)))
    ctx = binarize_logic(rules[0], golden_home)
    got = [(c.trigger, c.trigger_bit, c.action, c.action_bit) for c in ctx.clauses]
    assert got == [("contact1", 1, "light1", 1), ("contact1", 0, "light1", 0)]


def test_binarize_unknown_symbol_is_vocabulary_error(golden_home):
    text = """
def installed() { subscribe(contact1, "contact", h) }
def h(event) { if (event.value == "dim") { light1.on() } }
"""
    rules = extract_logic(parse_app(_src(text)))
    with pytest.raises(VocabularyError) as err:
        binarize_logic(rules[0], golden_home)
    assert err.value.symbol == "dim"


def test_binarize_unresolved_entity(golden_home):
    text = """
def installed() { subscribe(ghost, "contact", h) }
def h(event) { if (event.value == "open") { light1.on() } }
"""
    rules = extract_logic(parse_app(_src(text)))
    with pytest.raises(ExtractionError):
        binarize_logic(rules[0], golden_home)


def test_empty_app_context_is_allowed():
    assert len(AppContext(()).clauses) == 0


# -- display formats --------------------------------------------------------------


def test_format_logic_report_format():
    rules = extract_logic(parse_app(_src(SMART_LIGHT_APP)))
    text = format_logic(rules[0])
    lines = [l.strip() for l in text.splitlines()]
    assert lines[0] == "Trigger: Contact1"
    assert lines[1] == "Action: Switch1"
    assert lines[2] == "Logic 1: contact1 = open, light1 = on"
    assert lines[3] == "Logic 2: contact1 = closed, light1 = off"


def test_format_app_context_binary_format(golden_home):
    rules = extract_logic(parse_app(_src(SMART_LIGHT_APP)))
    ctx = binarize_logic(rules[0], golden_home)
    def norm(s):
        return " ".join(s.lower().split())
    want = [
        "app context 1: contact1 = 1, light1 = 1",
        "app context 2: contact1 = 0, light1 = 0",
    ]
    assert [norm(l) for l in format_app_context(ctx).splitlines()] == want


# -- database --------------------------------------------------------------------


def test_db_lookup_present_and_absent(golden_home):
    db = AppContextDatabase()
    assert db_lookup(db, "nope") is None
    pairs = extract_app(_src(SMART_LIGHT_APP, "sample"), golden_home)
    db.insert("sample", pairs[0][1], Provenance.OFFICIAL)
    assert db_lookup(db, "sample") == pairs[0][1]


def test_db_roundtrip(tmp_path, golden_home):
    db = AppContextDatabase()
    pairs = extract_app(_src(SMART_LIGHT_APP, "sample"), golden_home)
    db.insert("sample", pairs[0][1], Provenance.USER_SUBMITTED)
    path = str(tmp_path / "contexts.json")
    db.save(path)
    loaded = AppContextDatabase.load(path)
    assert loaded.lookup("sample") == db.lookup("sample")
    assert loaded.names() == ["sample"]


def test_generated_binding_app_template_extracts(tiny_home):
    src = binding_app_source(
        "Motion Light", "m1", "motionSensor", "motion", "l1", "light",
        (("active", "on"), ("inactive", "off")),
    )
    pairs = extract_app(AppSource("Motion Light", src), tiny_home)
    assert len(pairs) == 1
    clauses = pairs[0][1].clauses
    assert [(c.trigger_bit, c.action_bit) for c in clauses] == [(1, 1), (0, 0)]
