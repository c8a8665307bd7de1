import json
import random
from pathlib import Path

import pytest

from multinego import cli
from multinego.simulation import Scenario, ScenarioError, Transcript, TranscriptError, replay, run
from multinego.scenarios import antivirus_scenario, random_market_scenario, random_pair_scenario

from helpers import kinds, price_trajectories

ROOT = Path(__file__).resolve().parent.parent
SCENARIOS = ROOT / "scenarios"


@pytest.fixture(scope="module")
def antivirus():
    return run(antivirus_scenario(seed=1))


class TestAntivirus:
    def test_infeasible_run_aborts_at_limit(self, antivirus):
        [ep] = antivirus.episodes
        assert ep["outcome"] == "ABORTED" and ep["rounds_used"] == 10
        assert ep["prices"] == {} and ep["total"] is None

    def test_agent_summaries(self, antivirus):
        buyer = antivirus.agent("org-a")
        assert buyer["min_payoff"] == pytest.approx(144.0, abs=1e-4)
        assert buyer["max_payoff"] == pytest.approx(216.0, abs=1e-4)
        assert buyer["issues"]["iso"]["actual_cost"] == pytest.approx(4.0)
        seller = antivirus.agent("org-b")
        assert seller["min_payoff"] == pytest.approx(351.0, abs=1e-4)
        assert seller["max_payoff"] == pytest.approx(379.8, abs=1e-4)

    def test_buyer_picked_up_published_attributes(self, antivirus):
        iso = antivirus.agent("org-a")["issues"]["iso"]
        assert iso["u_min"] == pytest.approx(28.8) and iso["u_max"] == pytest.approx(43.2)

    def test_replay_clean(self, antivirus):
        report = replay(antivirus)
        assert report.clean, report

    def test_yaml_matches_builtin(self, antivirus):
        from_yaml = run(Scenario.load(SCENARIOS / "antivirus.yaml"), seed=1)
        strip = lambda t: [{k: v for k, v in a.items() if k not in ("name",)} for a in t.agents]
        assert from_yaml.episodes == antivirus.episodes
        assert strip(from_yaml) == strip(antivirus)


class TestDeterminism:
    def test_same_seed_same_bytes(self):
        s = random_market_scenario(random.Random(8))
        assert run(s, seed=5).to_bytes() == run(s, seed=5).to_bytes()

    def test_seed_env(self, monkeypatch):
        s = random_market_scenario(random.Random(8))
        monkeypatch.setenv("MULTINEGO_SEED", "5")
        assert run(s).to_bytes() == run(s, seed=5).to_bytes()
        assert run(s, seed=6).to_bytes() == run(s, seed=6).to_bytes()


class TestReplay:
    @pytest.fixture
    def agreed(self):
        for k in range(50):
            t = run(random_pair_scenario(random.Random(k), overlap=True, max_rounds=3))
            if "ACCEPT" in kinds(t) and t.outcome == "AGREED":
                return t
        pytest.fail("no agreeing scenario found")

    def test_flipped_line(self, agreed):
        idx = kinds(agreed).index("ACCEPT")
        obj = json.loads(agreed.lines[idx])
        obj["kind"], obj["payload"] = "FINALIZE", {}
        lines = list(agreed.lines)
        lines[idx] = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode() + b"\n"
        report = replay(Transcript(lines, agreed.episodes, agreed.agents))
        assert not report.clean and report.line == idx + 1

    def test_dropped_accept_diverges_at_summary(self, agreed):
        idx = len(kinds(agreed)) - 1 - kinds(agreed)[::-1].index("FINALIZE")
        lines = agreed.lines[:idx]
        report = replay(Transcript(lines, agreed.episodes, agreed.agents))
        assert not report.clean and report.line == len(lines) + 1

    def test_altered_summary(self, agreed):
        ep = dict(agreed.episodes[0])
        ep["total"] += 1.0
        report = replay(Transcript(agreed.lines, [ep], agreed.agents))
        assert not report.clean and "differs" in report.reason

    def test_missing_summary(self, agreed):
        assert not replay(Transcript(agreed.lines, [], agreed.agents)).clean

    def test_corrupt_line_number(self, agreed):
        data = agreed.to_bytes().splitlines(keepends=True)
        data[3] = b'{"kind": "OFF\n'
        with pytest.raises(TranscriptError) as exc:
            Transcript.from_bytes(b"".join(data))
        assert exc.value.lineno == 4

    def test_message_after_summary(self, agreed):
        data = agreed.to_bytes() + agreed.lines[0]
        with pytest.raises(TranscriptError, match="after the summaries"):
            Transcript.from_bytes(data)

    def test_empty(self):
        assert replay(b"").clean

    def test_file_round_trip(self, agreed, tmp_path):
        path = tmp_path / "t.jsonl"
        agreed.write(path)
        assert Transcript.read(path) == agreed
        assert replay(path).clean


class TestMarket:
    def test_three_sellers_yaml(self):
        t = run(Scenario.load(SCENARIOS / "three_sellers.yaml"))
        ks = kinds(t)
        assert ks.count("FINALIZE") == 1 and ks.count("DECLINE") == 2
        assert t.agent("buyer")["chosen"] == "seller-c"
        assert replay(t).clean

    def test_late_seller_joins_chain(self):
        t = run(Scenario.load(SCENARIOS / "three_sellers.yaml"))
        ids = {e["episode_id"] for e in t.episodes}
        assert len({i.split("/")[0] for i in ids}) == 1 and len(ids) == 3

    def test_seller_selects(self):
        rng = random.Random(1)
        s = random_market_scenario(rng)
        s.selector = "seller"
        t = run(s)
        assert replay(t).clean


class TestConcessionTrajectories:
    def test_pair_runs(self):
        rng = random.Random(77)
        for overlap in (True, False):
            for _ in range(20):
                t = run(random_pair_scenario(rng, overlap=overlap))
                for sender_totals in price_trajectories(t).values():
                    seller, buyer = sender_totals.get("seller", []), sender_totals.get("buyer", [])
                    assert all(b <= a + 1e-9 for a, b in zip(seller, seller[1:]))
                    assert all(b >= a - 1e-9 for a, b in zip(buyer, buyer[1:]))


class TestScenarioErrors:
    def write(self, tmp_path, text):
        p = tmp_path / "s.yaml"
        p.write_text(text)
        return p

    def test_missing_products(self, tmp_path):
        with pytest.raises(ScenarioError, match="products"):
            Scenario.load(self.write(tmp_path, "agents: []\n"))

    def test_field_path(self, tmp_path):
        text = (SCENARIOS / "three_sellers.yaml").read_text().replace("actual_cost: 11.0", "actual_cost: -1.0")
        with pytest.raises(ScenarioError, match=r"agents\[2\]\.valuations\.storage"):
            Scenario.load(self.write(tmp_path, text))

    def test_unknown_product(self, tmp_path):
        text = (SCENARIOS / "three_sellers.yaml").read_text().replace("product: hosting\n    arrive", "product: x\n    arrive")
        with pytest.raises(ScenarioError, match=r"agents\[3\]"):
            Scenario.load(self.write(tmp_path, text))

    def test_bad_opener(self, tmp_path):
        text = (SCENARIOS / "three_sellers.yaml").read_text() + "opener: broker\n"
        with pytest.raises(ScenarioError, match="opener"):
            Scenario.load(self.write(tmp_path, text))

    def test_not_a_file(self, tmp_path):
        with pytest.raises(ScenarioError):
            Scenario.load(tmp_path / "missing.yaml")


class TestCli:
    def test_run_aborted_exit_code(self, tmp_path):
        out = tmp_path / "t.jsonl"
        assert cli.main(["run", str(SCENARIOS / "antivirus.yaml"), "--transcript", str(out), "--seed", "2"]) == 2
        assert cli.main(["replay", str(out)]) == 0

    def test_run_agreed_exit_code(self, tmp_path, capsys):
        assert cli.main(["run", str(SCENARIOS / "three_sellers.yaml")]) == 0
        t = Transcript.from_bytes(capsys.readouterr().out.encode())
        assert t.outcome == "AGREED"

    def test_replay_divergence_exit_code(self, tmp_path):
        out = tmp_path / "t.jsonl"
        cli.main(["run", str(SCENARIOS / "three_sellers.yaml"), "--transcript", str(out)])
        text = out.read_text().replace('"outcome":"AGREED"', '"outcome":"ABORTED"', 1)
        out.write_text(text)
        assert cli.main(["replay", str(out)]) == 2

    def test_bad_scenario_exit_code(self, tmp_path):
        p = tmp_path / "bad.yaml"
        p.write_text("products: nope\n")
        assert cli.main(["run", str(p)]) == 1

    def test_corrupt_transcript_exit_code(self, tmp_path, caplog):
        p = tmp_path / "bad.jsonl"
        p.write_text("{oops\n")
        assert cli.main(["replay", str(p)]) == 1
        assert "line 1" in caplog.text
