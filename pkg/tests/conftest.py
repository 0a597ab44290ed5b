import pytest

from aegis.core import (
    EntityDescriptor,
    EntityKind,
    HomeDescriptor,
    Layout,
    PolicyKind,
    PolicyRule,
    ValueDomain,
)

# The contact-sensor smart light app used by the extractor goldens.
SMART_LIGHT_APP = """\
/* This is a sample smart light app */
definition(
    name: "Smart Light App",
    namespace: "aegis",
    author: "anonymous",
    description: "Turn lights on when door is open.",
    category: "Convenience",
)
preferences {
\tsection("When the door opens/closes...") {
\t\tinput "contact1", "capability.contactSensor", title: "Where?"
\t}
\tsection("Turn on/off a light...") {
\t\tinput "light1", "capability.light"
\t}
}
def installed() {
\tsubscribe(contact1, "contact", contactHandler)
}
def updated() {
\tunsubscribe()
\tsubscribe(contact1, "contact", contactHandler)
}
def contactHandler(event) {
\tif (event.value == "open") {
\t\tlight1.on()
\t} else if (event.value == "closed") {
\t\tlight1.off()
\t}
}
"""


def make_home(entities, policies=(), users=1, layout=Layout.SINGLE_BEDROOM):
    return HomeDescriptor(layout, tuple(entities), users, tuple(policies))


def sensor(id, subkind="motion", room="bedroom", deadband=None):
    domain = ValueDomain.NUMERIC if deadband is not None else ValueDomain.LOGICAL
    return EntityDescriptor(id, EntityKind.SENSOR, subkind, domain, room, deadband)


def device(id, subkind="smart-light", room="bedroom"):
    return EntityDescriptor(id, EntityKind.DEVICE, subkind, ValueDomain.LOGICAL, room)


def controller(id, subkind="smartphone"):
    return EntityDescriptor(id, EntityKind.CONTROLLER, subkind, ValueDomain.LOGICAL, "mobile")


@pytest.fixture
def golden_home():
    """Home whose entity ids match the sample app's device variables."""
    return make_home([sensor("contact1", "contact"), device("light1")])


@pytest.fixture
def tiny_home():
    return make_home(
        [
            sensor("m1", "motion"),
            sensor("d1", "contact"),
            device("l1"),
        ],
        policies=[PolicyRule(PolicyKind.SENSOR_BINDING, "l1", triggers=("m1",))],
    )
