"""Smoke test for the pydamq extension module.

Build and run:

    cargo build --release -p damq-noc-py --features extension-module
    cp target/release/libpydamq.so python/pydamq.so
    python3 python/smoke_test.py
"""

import csv
import io

import pydamq


def main():
    base = pydamq.SimConfig()
    assert base.scheme == "SAMQ"
    assert pydamq.buf_total(base) == 3584

    cfg = base.replace(scheme="DAMQS", injection_rate=0.1, warmup_cycles=200,
                       measure_cycles=1000, drain_limit_cycles=5000)
    assert cfg.scheme == "DAMQS" and cfg.injection_rate == 0.1
    assert pydamq.SimConfig.from_config_string(cfg.to_config_string()) == cfg

    report = pydamq.run(cfg)
    assert report.drained and report.dropped_packets == 0
    assert 0.08 < report.throughput < 0.12, report
    assert report.to_dict()["delivered_flits"] == report.injected_flits

    faults = pydamq.generate_faults(cfg.replace(fault_rate=0.04))
    assert len(faults) == 4

    assert not pydamq.is_turn_legal("E", "N", 2)
    assert pydamq.is_turn_legal("E", "N", 3)

    buf = pydamq.SharedBuffer("DAMQS", ["E", "S"], vc_count=4, shared_size=16)
    assert buf.free_unreserved == 16
    while buf.push("E", 0, packet_id=9):
        pass
    assert buf.occupancy("E", 0) == 18
    assert all(buf.can_accept("S", v) for v in range(4))
    assert buf.pop("E", 0) == 9
    assert buf.reclaim_packet(9) == 17
    buf.check_invariants()

    out = pydamq.sweep(cfg, scheme=["SAMQ", "DAMQA"], seed=[1, 2], jobs=1)
    rows = list(csv.DictReader(io.StringIO(out)))
    assert [(r["scheme"], r["seed"]) for r in rows] == [
        ("SAMQ", "1"), ("SAMQ", "2"), ("DAMQA", "1"), ("DAMQA", "2")]

    try:
        pydamq.SimConfig(scheme="BOGUS")
    except ValueError:
        pass
    else:
        raise AssertionError("bad scheme accepted")

    print("pydamq smoke test ok")


if __name__ == "__main__":
    main()
