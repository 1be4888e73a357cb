from distlist.client import Workload
from distlist.cluster import Cluster
from distlist.core import SUBHEAD, Item, ItemRef
from distlist.messages import ReplicateDelete, ReplicateInsertAfter
from distlist.sim import Envelope, Sleep
from distlist.verify import replay_oracle


def make_cluster(protocol="am", servers=2, layout=((0, ["A", "B", "C"]),), seed=0, **kw):
    kw.setdefault("theta", 300)
    kw.setdefault("request_timeout", 100)
    c = Cluster(protocol, servers=servers, seed=seed, **kw)
    refs = c.bootstrap([(sid, list(keys)) for sid, keys in layout])
    client = c.add_client(Workload(steps=0), name="t")
    return c, client, refs


def drive(cluster, client, gen):
    """Run one client generator to completion; returns its value or raises its error."""
    box = {}

    def wrapper():
        try:
            box["value"] = yield from gen
        except Exception as exc:  # surfaced to the caller below
            box["error"] = exc

    cluster.sim.spawn(wrapper(), owner=client.name, name="drive")
    cluster.run()
    if "error" in box:
        raise box["error"]
    return box["value"]


def keys(cluster):
    return [k for k, _, _ in cluster.global_sequence()]


# TR replay fixture: feed Replicate messages to a target server in any order

SOURCE = 0


def replicate_messages(events, hint):
    """Replicate bodies for source-order events.

    ``events``: ``("ins", prev_key, key, ts)`` with prev_key None for the
    SubHead, or ``("del", key)``.
    """
    ts_of = {}
    out = []
    for i, ev in enumerate(events):
        local = ItemRef(SOURCE, 1000 + i, 0)
        if ev[0] == "ins":
            _, prev_key, key, ts = ev
            ts_of[key] = ts
            prev = Item(SUBHEAD, 0, hint.sid, False) if prev_key is None else Item(prev_key, ts_of[prev_key], SOURCE, False)
            out.append(ReplicateInsertAfter("fx", prev, Item(key, ts, SOURCE, False), hint, local, None))
        else:
            _, key = ev
            out.append(ReplicateDelete("fx", Item(key, ts_of[key], SOURCE, True), hint, local, False, None))
    return out


def oracle_sequence(events):
    ts_of = {}
    oracle_events = []
    for ev in events:
        if ev[0] == "ins":
            _, prev_key, key, ts = ev
            ts_of[key] = ts
            prev = "SH" if prev_key is None else (SOURCE, ts_of[prev_key])
            oracle_events.append(("insert", prev, (SOURCE, ts), key))
        else:
            oracle_events.append(("delete", (SOURCE, ts_of[ev[1]])))
    return replay_oracle([("SH", SUBHEAD, False)], oracle_events)


def replay_in_order(events, order, max_rounds=1000):
    """Deliver the Replicate messages of ``events`` in ``order``; returns the target sequence."""
    c = Cluster("tr", servers=2, seed=0, theta=300, request_timeout=100)
    c.bootstrap([(1, [])])
    target = c.servers[1]
    sh = c.sublist_heads()[0]
    bodies = replicate_messages(events, sh)
    gens = []
    for mid in order:
        body = bodies[mid]
        env = Envelope(mid + 1, SOURCE, 1, body)
        handler = target.on_ReplicateInsertAfter if isinstance(body, ReplicateInsertAfter) else target.on_ReplicateDelete
        gens.append(handler(env))
    for _ in range(max_rounds):
        if not gens:
            return target.sequence(sh), target
        still = []
        for g in gens:
            try:
                while True:
                    effect = next(g)
                    if isinstance(effect, Sleep):
                        still.append(g)  # waiting for a predecessor replay
                        break
            except StopIteration:
                pass
        gens = still
    raise AssertionError("replay did not converge")
