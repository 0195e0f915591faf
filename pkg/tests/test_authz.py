"""Authorization server: consent, registration, tickets, grants, revocation."""

import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ztf.authz import (
    AuthorizationServer,
    ClaimsDocument,
    ConsentAbsent,
    EmptyScopes,
    GrantDenied,
    InvalidPAT,
    RptRecord,
    ScopeNotDeclared,
    TicketConsumed,
    TicketExpired,
    UnknownContextType,
    UnknownResource,
)
from ztf.clock import SimulatedClock
from ztf.ids import IdFactory
from ztf.model import ContextType, Scope

CAP1 = "https://cap1.example"
CAP2 = "https://cap2.example"
RP1 = "https://rp1.example"
RP2 = "https://rp2.example"
RP3 = "https://rp3.example"
ALICE = "alice@example.com"
BOB = "bob@example.com"
DEVICE_LOCATION = ContextType(f"{CAP1}/ctxtype/device-location")
DEVICE_HEALTH = ContextType(f"{CAP2}/ctxtype/device-health")
LOCATION_SCOPES = frozenset({Scope("ip"), Scope("wifi-ap"), Scope("used:ip")})


def make_server(auto=True, **kwargs):
    clock = kwargs.pop("clock", SimulatedClock())
    return AuthorizationServer(
        clock=clock,
        ids=IdFactory(seed=7),
        auto_approve_consent=auto,
        known_caps=[CAP1, CAP2],
        **kwargs,
    )


def register_device_location(server, owner=ALICE, cap=CAP1):
    pat = server.issue_pat(cap, owner)
    ctx_id = server.register_resource(pat.token, DEVICE_LOCATION, LOCATION_SCOPES)
    return pat, ctx_id


class TestConsentAndPat:
    def test_pat_issued_after_approval(self):
        server = make_server(auto=False)
        with pytest.raises(ConsentAbsent) as err:
            server.issue_pat(CAP1, ALICE)
        prompt_id = err.value.prompt_id
        server.respond_consent(prompt_id, approve=True)
        pat = server.issue_pat(CAP1, ALICE)
        assert server.introspect(pat.token)["active"]

    def test_no_consent_means_no_pat(self):
        server = make_server(auto=False)
        with pytest.raises(ConsentAbsent):
            server.issue_pat(CAP1, ALICE)

    def test_rejection_keeps_denying(self):
        server = make_server(auto=False)
        with pytest.raises(ConsentAbsent) as err:
            server.issue_pat(CAP1, ALICE)
        server.respond_consent(err.value.prompt_id, approve=False)
        with pytest.raises(ConsentAbsent):
            server.issue_pat(CAP1, ALICE)

    def test_double_respond_is_noop(self):
        server = make_server(auto=False)
        with pytest.raises(ConsentAbsent) as err:
            server.issue_pat(CAP1, ALICE)
        prompt = server.respond_consent(err.value.prompt_id, approve=True)
        assert prompt.status == "approved"
        prompt = server.respond_consent(err.value.prompt_id, approve=False)
        assert prompt.status == "approved"

    def test_reissue_replay_keeps_one_active_pat_per_pair(self):
        # Oracle: replay the issuance log; after every step exactly one of
        # the issued tokens for the pair must introspect active.
        server = make_server()
        issued = []
        for _ in range(5):
            issued.append(server.issue_pat(CAP1, ALICE).token)
            active = [t for t in issued if server.introspect(t)["active"]]
            assert active == [issued[-1]]


class TestResourceRegistration:
    def test_registration_visible_in_resource_list(self):
        server = make_server()
        _, ctx_id = register_device_location(server)
        assert server.list_resources(ALICE) == [
            {
                "ctx_id": ctx_id,
                "ctx_type": DEVICE_LOCATION.uri,
                "cap_origin": CAP1,
                "scopes": ["ip", "used:ip", "wifi-ap"],
            }
        ]

    def test_revoked_pat_cannot_register(self):
        server = make_server()
        old = server.issue_pat(CAP1, ALICE)
        server.issue_pat(CAP1, ALICE)  # revokes old
        with pytest.raises(InvalidPAT):
            server.register_resource(old.token, DEVICE_LOCATION, LOCATION_SCOPES)

    def test_empty_scopes_rejected(self):
        server = make_server()
        pat = server.issue_pat(CAP1, ALICE)
        with pytest.raises(EmptyScopes):
            server.register_resource(pat.token, DEVICE_LOCATION, frozenset())

    def test_double_registration_idempotent_cardinality_oracle(self):
        server = make_server()
        triples = [
            (ALICE, CAP1, DEVICE_LOCATION),
            (ALICE, CAP2, DEVICE_HEALTH),
            (BOB, CAP1, DEVICE_LOCATION),
        ]
        issued = []
        for owner, cap, ctx_type in triples * 3:
            pat = server.issue_pat(cap, owner)
            issued.append(server.register_resource(pat.token, ctx_type, LOCATION_SCOPES))
        # Oracle: the number of distinct ids equals the number of distinct triples.
        assert len(set(issued)) == len(set(triples))

    def test_pat_scoping_fixes_owner_and_origin(self):
        server = make_server()
        pat = server.issue_pat(CAP1, ALICE)
        ctx_id = server.register_resource(pat.token, DEVICE_LOCATION, LOCATION_SCOPES)
        record = server.resource(ctx_id)
        assert (record.owner, record.cap) == (ALICE, CAP1)


class TestPermissionTickets:
    def test_ticket_for_declared_scopes(self):
        server = make_server()
        _, ctx_id = register_device_location(server)
        ticket = server.issue_permission_ticket(CAP1, ctx_id, frozenset({"used:ip"}))
        assert ticket.ticket

    def test_undeclared_scope_rejected(self):
        server = make_server()
        _, ctx_id = register_device_location(server)
        with pytest.raises(ScopeNotDeclared):
            server.issue_permission_ticket(CAP1, ctx_id, frozenset({"nonexistent"}))

    def test_wrong_cap_cannot_get_ticket(self):
        server = make_server()
        _, ctx_id = register_device_location(server)
        with pytest.raises(UnknownResource):
            server.issue_permission_ticket(CAP2, ctx_id, frozenset({"used:ip"}))

    def test_fifty_tickets_single_use_double_spend_oracle(self):
        server = make_server()
        _, ctx_id = register_device_location(server)
        server.set_policy(ALICE, RP1, DEVICE_LOCATION, frozenset({"used:ip"}))
        tickets = [
            server.issue_permission_ticket(CAP1, ctx_id, frozenset({"used:ip"})).ticket
            for _ in range(50)
        ]
        assert len(set(tickets)) == 50
        successes = 0
        for ticket in tickets:
            for _ in range(2):
                try:
                    outcome = server.grant_rpt(ticket, ClaimsDocument(RP1))
                    if isinstance(outcome, RptRecord):
                        successes += 1
                except TicketConsumed:
                    pass
        assert successes == 50

    def test_expired_ticket(self):
        clock = SimulatedClock()
        server = make_server(clock=clock, ticket_ttl=120)
        _, ctx_id = register_device_location(server)
        ticket = server.issue_permission_ticket(CAP1, ctx_id, frozenset({"used:ip"}))
        clock.advance(121)
        with pytest.raises(TicketExpired):
            server.grant_rpt(ticket.ticket, ClaimsDocument(RP1))


class TestGrantRpt:
    def test_policy_grants_requested_scopes(self):
        server = make_server()
        _, ctx_id = register_device_location(server)
        server.set_policy(ALICE, RP1, DEVICE_LOCATION, frozenset({"ip", "wifi-ap"}))
        ticket = server.issue_permission_ticket(
            CAP1, ctx_id, frozenset({"ip", "wifi-ap"})
        )
        rpt = server.grant_rpt(ticket.ticket, ClaimsDocument(RP1))
        assert isinstance(rpt, RptRecord)
        assert rpt.grants == [(ctx_id, frozenset({"ip", "wifi-ap"}))]

    def test_no_rule_means_denial(self):
        server = make_server()
        _, ctx_id = register_device_location(server)
        ticket = server.issue_permission_ticket(CAP1, ctx_id, frozenset({"used:ip"}))
        assert isinstance(server.grant_rpt(ticket.ticket, ClaimsDocument(RP3)), GrantDenied)

    def test_subset_lattice_oracle(self):
        # Oracle: over every (policy, request) pair in the subset lattice of a
        # three-scope universe, grants must equal policy ∩ request.
        universe = ["ip", "wifi-ap", "used:ip"]
        subsets = [
            frozenset(c)
            for n in range(len(universe) + 1)
            for c in itertools.combinations(universe, n)
        ]
        for policy_scopes in subsets:
            for requested in subsets:
                if not requested:
                    continue  # tickets require at least the requested pair
                server = make_server()
                _, ctx_id = register_device_location(server)
                if policy_scopes:
                    server.set_policy(ALICE, RP1, DEVICE_LOCATION, policy_scopes)
                ticket = server.issue_permission_ticket(CAP1, ctx_id, requested)
                outcome = server.grant_rpt(ticket.ticket, ClaimsDocument(RP1))
                expected = policy_scopes & requested
                if expected:
                    assert isinstance(outcome, RptRecord)
                    assert outcome.grants == [(ctx_id, expected)]
                else:
                    assert isinstance(outcome, GrantDenied)

    def test_grant_is_policy_intersect_request(self):
        server = make_server()
        _, ctx_id = register_device_location(server)
        server.set_policy(ALICE, RP1, DEVICE_LOCATION, frozenset({"used:ip"}))
        ticket = server.issue_permission_ticket(
            CAP1, ctx_id, frozenset({"used:ip", "wifi-ap"})
        )
        rpt = server.grant_rpt(ticket.ticket, ClaimsDocument(RP1))
        assert rpt.grants == [(ctx_id, frozenset({"used:ip"}))]


class TestIntrospection:
    def test_fresh_rpt_is_active_with_grants(self):
        server = make_server()
        _, ctx_id = register_device_location(server)
        server.set_policy(ALICE, RP1, DEVICE_LOCATION, frozenset({"used:ip"}))
        ticket = server.issue_permission_ticket(CAP1, ctx_id, frozenset({"used:ip"}))
        rpt = server.grant_rpt(ticket.ticket, ClaimsDocument(RP1))
        info = server.introspect(rpt.token)
        assert info == {
            "active": True,
            "requesting_party": RP1,
            "grants": [{"ctx_id": ctx_id, "scopes": ["used:ip"]}],
            "owner": ALICE,
        }

    def test_random_string_inactive(self):
        server = make_server()
        assert server.introspect("not-a-token") == {"active": False}

    def test_expired_rpt_inactive(self):
        clock = SimulatedClock()
        server = make_server(clock=clock, rpt_ttl=3600)
        _, ctx_id = register_device_location(server)
        server.set_policy(ALICE, RP1, DEVICE_LOCATION, frozenset({"used:ip"}))
        ticket = server.issue_permission_ticket(CAP1, ctx_id, frozenset({"used:ip"}))
        rpt = server.grant_rpt(ticket.ticket, ClaimsDocument(RP1))
        clock.advance(3601)
        assert server.introspect(rpt.token) == {"active": False}

    def test_timeline_replay_oracle(self):
        # Replay a policy timeline and recompute the expected active set at
        # every step with an independent model of the rules.
        clock = SimulatedClock()
        server = make_server(clock=clock)
        _, ctx_id = register_device_location(server)

        timeline = [
            ("set", RP1, frozenset({"used:ip"})),
            ("grant", RP1, frozenset({"used:ip"})),
            ("set", RP2, frozenset({"ip"})),
            ("grant", RP2, frozenset({"ip"})),
            ("remove", RP1, None),
            ("sweep", None, None),
            ("set", RP1, frozenset({"used:ip"})),  # re-adding must not resurrect
            ("sweep", None, None),
        ]
        issued: dict[str, tuple[str, frozenset]] = {}
        model_policy: dict[str, frozenset] = {}
        model_revoked: set[str] = set()

        for step, (op, party, scopes) in enumerate(timeline):
            if op == "set":
                server.set_policy(ALICE, party, DEVICE_LOCATION, scopes)
                model_policy[party] = scopes
            elif op == "remove":
                server.remove_policy(ALICE, party, DEVICE_LOCATION)
                model_policy.pop(party, None)
            elif op == "grant":
                ticket = server.issue_permission_ticket(CAP1, ctx_id, scopes)
                rpt = server.grant_rpt(ticket.ticket, ClaimsDocument(party))
                assert isinstance(rpt, RptRecord)
                issued[rpt.token] = (party, scopes)
            elif op == "sweep":
                server.revocation_sweep()
                for token, (p, s) in issued.items():
                    if not s <= model_policy.get(p, frozenset()):
                        model_revoked.add(token)
            for token, (p, s) in issued.items():
                expected = token not in model_revoked
                assert server.introspect(token)["active"] is expected, (
                    f"step {step}: token for {p} expected active={expected}"
                )

    def test_removing_rule_then_sweep_deactivates(self):
        server = make_server()
        _, ctx_id = register_device_location(server)
        server.set_policy(ALICE, RP1, DEVICE_LOCATION, frozenset({"used:ip"}))
        ticket = server.issue_permission_ticket(CAP1, ctx_id, frozenset({"used:ip"}))
        rpt = server.grant_rpt(ticket.ticket, ClaimsDocument(RP1))
        server.remove_policy(ALICE, RP1, DEVICE_LOCATION)
        server.revocation_sweep()
        assert server.introspect(rpt.token) == {"active": False}

    def test_lazy_sweep_runs_after_interval(self):
        clock = SimulatedClock()
        server = make_server(clock=clock, sweep_interval=10)
        _, ctx_id = register_device_location(server)
        server.set_policy(ALICE, RP1, DEVICE_LOCATION, frozenset({"used:ip"}))
        ticket = server.issue_permission_ticket(CAP1, ctx_id, frozenset({"used:ip"}))
        rpt = server.grant_rpt(ticket.ticket, ClaimsDocument(RP1))
        server.remove_policy(ALICE, RP1, DEVICE_LOCATION)
        assert server.introspect(rpt.token)["active"]  # within the interval
        clock.advance(11)
        assert server.introspect(rpt.token) == {"active": False}


class TestPolicyViews:
    def test_set_policy_for_unregistered_type(self):
        server = make_server()
        with pytest.raises(UnknownContextType):
            server.set_policy(ALICE, RP3, DEVICE_LOCATION, frozenset({"used:ip"}))

    def test_share_with_others_flow(self):
        server = make_server()
        _, ctx_id = register_device_location(server)
        server.set_policy(ALICE, RP3, DEVICE_LOCATION, frozenset({"used:ip"}))
        ticket = server.issue_permission_ticket(CAP1, ctx_id, frozenset({"used:ip"}))
        rpt = server.grant_rpt(ticket.ticket, ClaimsDocument(RP3))
        assert isinstance(rpt, RptRecord)
        assert rpt.grants == [(ctx_id, frozenset({"used:ip"}))]

    def test_fresh_owner_sees_nothing(self):
        server = make_server()
        assert server.list_resources(BOB) == []

    def test_shares_match_stored_policy_verbatim(self):
        server = make_server()
        _, ctx_id = register_device_location(server)
        server.set_policy(ALICE, RP1, DEVICE_LOCATION, frozenset({"ip", "wifi-ap"}))
        server.set_policy(ALICE, RP2, DEVICE_LOCATION, frozenset({"used:ip"}))
        shares = {s["requesting_party"]: s["scopes"] for s in server.list_shares(ALICE, ctx_id)}
        assert shares == {RP1: ["ip", "wifi-ap"], RP2: ["used:ip"]}


@settings(max_examples=200, deadline=None)
@given(
    requested=st.sets(st.sampled_from(["ip", "wifi-ap", "used:ip"]), min_size=1),
    party=st.sampled_from([RP1, RP2, RP3]),
)
def test_deny_by_default_with_empty_policy(requested, party):
    server = make_server()
    _, ctx_id = register_device_location(server)
    ticket = server.issue_permission_ticket(CAP1, ctx_id, frozenset(requested))
    assert isinstance(server.grant_rpt(ticket.ticket, ClaimsDocument(party)), GrantDenied)


def test_grant_soundness_from_log_replay():
    # Oracle: replay the server's own event log and check every grant event
    # against the policy state reconstructed from earlier events.
    server = make_server()
    _, ctx_id = register_device_location(server)
    rng_steps = [
        ("policy", RP1, {"ip", "used:ip"}),
        ("request", RP1, {"ip"}),
        ("policy", RP2, {"wifi-ap"}),
        ("request", RP2, {"wifi-ap", "ip"}),
        ("policy", RP1, {"used:ip"}),
        ("request", RP1, {"ip", "used:ip"}),
        ("request", RP3, {"ip"}),
    ]
    for op, party, scopes in rng_steps:
        if op == "policy":
            server.set_policy(ALICE, party, DEVICE_LOCATION, frozenset(scopes))
        else:
            ticket = server.issue_permission_ticket(CAP1, ctx_id, frozenset(scopes))
            server.grant_rpt(ticket.ticket, ClaimsDocument(party))

    policy_state: dict[tuple[str, str], frozenset] = {}
    tickets: dict[str, frozenset] = {}
    for event in server.log:
        if event["op"] == "policy_set":
            policy_state[(event["requesting_party"], event["ctx_type"])] = frozenset(
                event["scopes"]
            )
        elif event["op"] == "ticket":
            tickets[event["ticket"]] = frozenset(event["scopes"])
        elif event["op"] == "grant":
            requested = tickets[event["ticket"]]
            for granted_ctx, granted_scopes in event["grants"]:
                allowed = policy_state.get(
                    (event["requesting_party"], DEVICE_LOCATION.uri), frozenset()
                )
                assert frozenset(granted_scopes) <= (allowed & requested)
