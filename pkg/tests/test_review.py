"""Tests for the event-sourced triage + comparison service."""

import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

from harmonytk import imgcore as ic
from harmonytk import review

METHODS = ("REINHARD_LAB", "XIAO_RGB", "FECKER_HIST", "PITIE_IDT")


def _png(path, seed, size=8):
    rng = np.random.default_rng(seed)
    ic.write_image(ic.ImageRGB(rng.random((size, size, 3))), path)


def make_dataset(tmp_path, n_targets=3, methods=METHODS):
    root = tmp_path / "data"
    for sub in ("real", "composite", "mask"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    rows = []
    seed = 0
    for i in range(n_targets):
        tid = f"t{i:02d}"
        _png(root / "real" / f"{tid}.png", seed := seed + 1)
        mask = np.zeros((8, 8), dtype=bool)
        mask[2:6, 2:6] = True
        ic.write_mask(ic.MaskImage(mask), root / "mask" / f"{tid}.png")
        for k, m in enumerate(methods):
            rid = f"{tid}-c{k}"
            _png(root / "composite" / f"{rid}.png", seed := seed + 1)
            rows.append({
                "record_id": rid,
                "composite_path": f"composite/{rid}.png",
                "real_path": f"real/{tid}.png",
                "mask_path": f"mask/{tid}.png",
                "method": m,
                "reference_id": "ref",
                "seed": 0,
                "filter_verdicts": [["ratio", True, 0.25]],
                "human_verdict": None,
                "category_label": "cat",
                "split": "train",
            })
    manifest = root / "manifest.jsonl"
    with open(manifest, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    return root, manifest, rows


def make_service(tmp_path, **kwargs):
    root, manifest, rows = make_dataset(tmp_path, **kwargs)
    state = tmp_path / "state"
    svc = review.ReviewService(state, root)
    svc.enqueue_from_manifest(manifest)
    return svc, root, manifest, rows


class TestEnqueue:
    def test_empty_manifest_gives_empty_queue(self, tmp_path):
        manifest = tmp_path / "manifest.jsonl"
        manifest.write_text("")
        svc = review.ReviewService(tmp_path / "state", tmp_path)
        assert svc.enqueue_from_manifest(manifest) == 0

    def test_idempotent_enqueue(self, tmp_path):
        svc, _, manifest, rows = make_service(tmp_path)
        assert len(svc.state.items) == len(rows) == 12
        assert svc.enqueue_from_manifest(manifest) == 12
        assert len(svc.state.items) == 12

    def test_reviewed_items_stay_reviewed_after_restart(self, tmp_path):
        svc, root, manifest, rows = make_service(tmp_path)
        for row in rows[:3]:
            svc.submit_verdict(row["record_id"], "accept")
        svc.log.close()
        again = review.ReviewService(tmp_path / "state", root)
        assert again.enqueue_from_manifest(manifest) == 9
        assert len(again.state.items) == 12

    def test_duels_cover_method_pairs_once(self, tmp_path):
        svc, *_ = make_service(tmp_path)
        # 3 targets x C(4,2) unordered method pairs
        assert len(svc.state.duels) == 18
        for duel in svc.state.duels.values():
            assert duel.method_a != duel.method_b


class TestTriage:
    def test_verdict_flow(self, tmp_path):
        svc, *_ = make_service(tmp_path)
        first = svc.next_review_item()
        assert first.status == review.PENDING
        decided = svc.submit_verdict(first.item_id, "accept")
        assert decided.status == review.ACCEPTED
        assert svc.next_review_item().item_id != first.item_id

    def test_second_verdict_conflicts_and_keeps_first(self, tmp_path):
        svc, *_ = make_service(tmp_path)
        item = svc.next_review_item()
        svc.submit_verdict(item.item_id, "reject", "hue_change")
        with pytest.raises(review.ConflictError):
            svc.submit_verdict(item.item_id, "accept")
        assert svc.state.items[item.item_id].status == review.REJECTED
        assert svc.state.items[item.item_id].reason == "hue_change"

    def test_bad_inputs(self, tmp_path):
        svc, *_ = make_service(tmp_path)
        item = svc.next_review_item()
        with pytest.raises(review.NotFoundError):
            svc.submit_verdict("nope", "accept")
        with pytest.raises(review.BadRequestError):
            svc.submit_verdict(item.item_id, "reject", "too_ugly")
        with pytest.raises(review.BadRequestError):
            svc.submit_verdict(item.item_id, "maybe")

    def test_rejected_record_leaves_export(self, tmp_path):
        svc, _, _, rows = make_service(tmp_path)
        before = {r["record_id"] for r in svc.export_manifest_view()}
        assert before == {r["record_id"] for r in rows}
        victim = rows[4]["record_id"]
        svc.submit_verdict(victim, "reject", "hue_change")
        after = {r["record_id"] for r in svc.export_manifest_view()}
        assert after == before - {victim}

    def test_empty_queue_raises(self, tmp_path):
        svc, _, _, rows = make_service(tmp_path)
        for row in rows:
            svc.submit_verdict(row["record_id"], "accept")
        with pytest.raises(review.NotFoundError):
            svc.next_review_item()


class TestComparisons:
    def test_unknown_session_rejected(self, tmp_path):
        svc, *_ = make_service(tmp_path)
        with pytest.raises(review.NotFoundError):
            svc.next_comparison("ghost")

    def test_serve_and_submit(self, tmp_path):
        svc, *_ = make_service(tmp_path)
        sid = svc.open_session()
        task, duel, remaining = svc.next_comparison(sid)
        assert remaining == 17
        result = svc.submit_comparison(task.task_id, sid, "a")
        assert result["winner"] in (duel.method_a, duel.method_b)
        assert {result["method_a"], result["method_b"]} == \
            {duel.method_a, duel.method_b}

    def test_winner_respects_flip(self, tmp_path):
        svc, *_ = make_service(tmp_path)
        for _ in range(20):
            sid = svc.open_session()
            task, duel, _ = svc.next_comparison(sid)
            result = svc.submit_comparison(task.task_id, sid, "a")
            shown_left = duel.method_b if task.flip else duel.method_a
            assert result["winner"] == shown_left

    def test_session_never_sees_a_duel_twice(self, tmp_path):
        svc, *_ = make_service(tmp_path)
        sid = svc.open_session()
        served = []
        for _ in range(18):
            task, _, _ = svc.next_comparison(sid)
            served.append(svc.state.tasks[task.task_id].duel_id)
        assert len(set(served)) == 18
        with pytest.raises(review.NotFoundError):
            svc.next_comparison(sid)

    def test_scheduler_keeps_counts_balanced(self, tmp_path):
        svc, *_ = make_service(tmp_path)
        sessions = [svc.open_session() for _ in range(5)]
        active = list(sessions)
        while active:
            still = []
            for sid in active:
                try:
                    svc.next_comparison(sid)
                except review.NotFoundError:
                    continue
                counts = [d.served for d in svc.state.duels.values()]
                assert max(counts) - min(counts) <= 1
                still.append(sid)
            active = still
        assert all(d.served == 5 for d in svc.state.duels.values())

    def test_left_right_split_is_binomial(self, tmp_path):
        svc, *_ = make_service(tmp_path, n_targets=1,
                               methods=("REINHARD_LAB", "XIAO_RGB"))
        assert len(svc.state.duels) == 1
        flips = 0
        for _ in range(1000):
            sid = svc.open_session()
            task, _, _ = svc.next_comparison(sid)
            flips += int(task.flip)
        assert abs(flips - 500) <= 60

    def test_submit_conflicts(self, tmp_path):
        svc, *_ = make_service(tmp_path)
        sid = svc.open_session()
        other = svc.open_session()
        task, _, _ = svc.next_comparison(sid)
        with pytest.raises(review.NotFoundError):
            svc.submit_comparison("task-999999", sid, "a")
        with pytest.raises(review.BadRequestError):
            svc.submit_comparison(task.task_id, other, "a")
        with pytest.raises(review.BadRequestError):
            svc.submit_comparison(task.task_id, sid, "left")
        svc.submit_comparison(task.task_id, sid, "b")
        with pytest.raises(review.ConflictError):
            svc.submit_comparison(task.task_id, sid, "a")


class TestExports:
    def test_no_data_raises(self, tmp_path):
        svc, *_ = make_service(tmp_path)
        with pytest.raises(review.NotFoundError):
            svc.export_comparisons()

    def test_conservation_and_byte_stability(self, tmp_path):
        svc, *_ = make_service(tmp_path)
        submitted = 0
        for _ in range(3):
            sid = svc.open_session()
            for _ in range(6):
                task, _, _ = svc.next_comparison(sid)
                svc.submit_comparison(task.task_id, sid,
                                      "a" if submitted % 2 else "b")
                submitted += 1
        text = svc.export_comparisons()
        assert text == svc.export_comparisons()
        lines = [json.loads(l) for l in text.strip().split("\n")]
        assert len(lines) == submitted
        for line in lines:
            assert set(line) == {"method_a", "method_b", "winner"}
            assert line["winner"] in (line["method_a"], line["method_b"])


class TestReplay:
    def test_replay_rebuilds_identical_state(self, tmp_path):
        svc, root, manifest, rows = make_service(tmp_path, n_targets=4)
        for row in rows:
            verdict = "accept" if hash(row["record_id"]) % 3 else "reject"
            svc.submit_verdict(row["record_id"], verdict,
                               "unrealistic" if verdict == "reject" else None)
        rng = np.random.default_rng(0)
        for _ in range(6):
            sid = svc.open_session()
            while True:
                try:
                    task, _, _ = svc.next_comparison(sid)
                except review.NotFoundError:
                    break
                svc.submit_comparison(task.task_id, sid,
                                      "a" if rng.integers(2) else "b")
        n_events = sum(1 for _ in svc.log.replay())
        assert n_events > 200
        want = svc.state.snapshot()
        want_export = svc.export_comparisons()
        svc.log.close()

        rebuilt = review.ReviewService(tmp_path / "state", root)
        assert rebuilt.state.snapshot() == want
        assert rebuilt.export_comparisons() == want_export


class TestHTTP:
    @pytest.fixture()
    def client(self, tmp_path):
        root, manifest, rows = make_dataset(tmp_path)
        app = review.create_app(tmp_path / "state", root,
                                manifest_path=manifest)
        with TestClient(app) as c:
            yield c, root, rows

    def test_review_endpoints(self, client):
        c, root, rows = client
        r = c.get("/api/review/next")
        assert r.status_code == 200
        body = r.json()
        assert body["pending"] == 12
        img = c.get(body["composite_url"])
        assert img.status_code == 200
        want = (root / "composite" / f"{body['item_id']}.png").read_bytes()
        assert img.content == want

        r = c.post(f"/api/review/{body['item_id']}/verdict",
                   json={"verdict": "accept"})
        assert r.status_code == 200
        assert r.json()["status"] == "accepted"
        r = c.post(f"/api/review/{body['item_id']}/verdict",
                   json={"verdict": "accept"})
        assert r.status_code == 409
        assert r.json() == {"error": "already_decided"}
        r = c.post("/api/review/ghost/verdict", json={"verdict": "accept"})
        assert r.status_code == 404
        r = c.post(f"/api/review/{rows[5]['record_id']}/verdict",
                   json={"verdict": "reject", "reason": "nope"})
        assert r.status_code == 422

    def test_compare_endpoints_hide_methods(self, client):
        c, root, _ = client
        sid = c.post("/api/session").json()["session_id"]
        r = c.get("/api/compare/next", params={"session": sid})
        assert r.status_code == 200
        body = r.json()
        text = json.dumps(body)
        for tag in METHODS:
            assert tag not in text
        a = c.get(body["image_a_url"])
        b = c.get(body["image_b_url"])
        assert a.status_code == 200 and b.status_code == 200
        assert a.content != b.content

        r = c.post(f"/api/compare/{body['task_id']}",
                   params={"session": sid}, json={"winner": "a"})
        assert r.status_code == 200
        r = c.post(f"/api/compare/{body['task_id']}",
                   params={"session": sid}, json={"winner": "b"})
        assert r.status_code == 409

        exp = c.get("/api/export/comparisons")
        assert exp.status_code == 200
        line = json.loads(exp.text.strip())
        assert line["winner"] in (line["method_a"], line["method_b"])

    def test_duel_slots_track_flip(self, client):
        c, root, _ = client
        svc = c.app.state.service
        for _ in range(10):
            sid = c.post("/api/session").json()["session_id"]
            body = c.get("/api/compare/next",
                         params={"session": sid}).json()
            task = svc.state.tasks[body["task_id"]]
            duel = svc.state.duels[task.duel_id]
            first = (root / duel.image_a_path).read_bytes()
            second = (root / duel.image_b_path).read_bytes()
            shown_a = c.get(body["image_a_url"]).content
            assert shown_a == (second if task.flip else first)

    def test_stats_and_manifest_export(self, client):
        c, _, rows = client
        s = c.get("/api/stats").json()
        assert s["items"] == 12 and s["duels"] == 18
        r = c.get("/api/export/manifest").json()
        assert len(r["records"]) == len(rows)

    def test_unknown_image_kinds(self, client):
        c, _, _ = client
        assert c.get("/img/banana/t00-c0").status_code == 404
        assert c.get("/img/composite/ghost").status_code == 404
        assert c.get("/img/duel-a/task-000099").status_code == 404

    def test_export_no_data(self, client):
        c, _, _ = client
        assert c.get("/api/export/comparisons").status_code == 404
