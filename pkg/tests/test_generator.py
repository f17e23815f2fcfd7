import pytest

from quantproxy import dsl
from quantproxy.dpo import ACTIONS
from quantproxy.errors import EndpointError
from quantproxy.generator import (ContextEntry, GenerationRequest,
                                  LlmEndpointConfig, Rejection, generate,
                                  generate_llm, generate_offline,
                                  parse_llm_response, render_prompt)

from mock_llm import MALFORMED_RESPONSE, VALID_RESPONSE, MockLlmServer


def ctx(expr_text, phi=0.5, rho=0.2, cid="p-1", birth=0):
    return ContextEntry(candidate_id=cid, expr_text=expr_text, rho_sens=rho,
                        phi=phi, reasoning_excerpt="prior reasoning",
                        birth_generation=birth)


class TestRenderPrompt:
    def test_init_prompt_carries_features_and_prior(self):
        prompt = render_prompt(GenerationRequest(op="init", context=(),
                                                 count=4, seed=0))
        for feature in dsl.FEATURES:
            assert feature in prompt
        assert "positively correlated" in prompt
        assert "quantization error" in prompt

    def test_mutation_embeds_context_expression(self):
        req = GenerationRequest(op="mutation", context=(ctx("(w_l2 * depth)"),),
                                count=2, seed=0)
        assert "(w_l2 * depth)" in render_prompt(req)

    def test_crossover_labels_both_parents(self):
        req = GenerationRequest(
            op="crossover",
            context=(ctx("(w_l2 * depth)", phi=0.9, cid="p-1"),
                     ctx("exp(a_entropy)", phi=0.4, cid="p-2")),
            count=2, seed=0)
        prompt = render_prompt(req)
        assert "Parent A: (w_l2 * depth)" in prompt
        assert "Parent B: exp(a_entropy)" in prompt

    def test_token_budget_truncates_oldest_first(self):
        entries = tuple(
            ctx(f"(w_l2 * {i}.0)", phi=0.1 * i, cid=f"p-{i}", birth=i)
            for i in range(10))
        req = GenerationRequest(op="mutation", context=entries, count=1,
                                seed=0, token_budget=260)
        prompt = render_prompt(req)
        assert len(prompt.split()) <= 260
        # newest entry survives, oldest does not
        assert "(w_l2 * 9.0)" in prompt
        assert "(w_l2 * 0.0)" not in prompt

    def test_deterministic(self):
        req = GenerationRequest(op="init", context=(), count=1, seed=3)
        assert render_prompt(req) == render_prompt(req)

    def test_crossover_requires_two_parents(self):
        with pytest.raises(ValueError, match="two context"):
            GenerationRequest(op="crossover", context=(ctx("w_l2"),),
                              count=1, seed=0)


class TestParseLlmResponse:
    def test_well_formed(self):
        parsed = parse_llm_response(VALID_RESPONSE)
        assert not isinstance(parsed, Rejection)
        reasoning, expr = parsed
        assert "degrade" in reasoning
        assert expr == dsl.parse("w_l2 * a_entropy")

    def test_no_fenced_block(self):
        parsed = parse_llm_response(MALFORMED_RESPONSE)
        assert isinstance(parsed, Rejection)
        assert "missing expression block" in parsed.reason

    def test_bad_operator_carries_position(self):
        parsed = parse_llm_response("thoughts\n```\nw_l2 ** depth\n```\n")
        assert isinstance(parsed, Rejection)
        assert "position" in parsed.reason

    def test_language_tag_tolerated(self):
        parsed = parse_llm_response("r\n```text\nw_l2 + a_std\n```\n")
        assert not isinstance(parsed, Rejection)

    def test_expression_without_features_rejected(self):
        parsed = parse_llm_response("r\n```\n1 + 2\n```\n")
        assert isinstance(parsed, Rejection)
        assert "feature" in parsed.reason

    def test_last_fenced_block_wins(self):
        text = "first\n```\nbroken ++\n```\nmore\n```\ndepth\n```\n"
        parsed = parse_llm_response(text)
        assert not isinstance(parsed, Rejection)
        assert parsed[1] == dsl.Feature("depth")


class TestGenerateOffline:
    def test_init_deterministic_bit_exact(self):
        req = GenerationRequest(op="init", context=(), count=4, seed=0)
        a = generate_offline(req)
        b = generate_offline(req)
        assert [c.expr_text for c in a] == [c.expr_text for c in b]
        assert [c.id for c in a] == [c.id for c in b]
        assert len(a) == 4

    def test_every_candidate_parses_and_references_a_feature(self):
        for seed in range(20):
            req = GenerationRequest(op="init", context=(), count=6, seed=seed)
            for c in generate_offline(req):
                expr = dsl.parse(c.expr_text)
                assert dsl.features_used(expr)
                assert dsl.depth(expr) <= dsl.MAX_DEPTH

    def test_single_leaf_mutation_falls_through_to_subtree(self):
        # "w_l2" has no constant to jitter and no operator to swap; every
        # mutation must fall back to subtree replacement and still parse.
        req = GenerationRequest(op="mutation", context=(ctx("w_l2"),),
                                count=8, seed=1)
        for c in generate_offline(req):
            dsl.parse(c.expr_text)
            assert c.origin == "mutation"

    def test_crossover_of_single_leaves_transposes(self):
        req = GenerationRequest(
            op="crossover",
            context=(ctx("w_l2", cid="p-1"), ctx("a_entropy", cid="p-2")),
            count=2, seed=2)
        texts = sorted(c.expr_text for c in generate_offline(req))
        assert texts == ["a_entropy", "w_l2"]

    def test_mutation_children_track_parent_ids(self):
        req = GenerationRequest(op="mutation",
                                context=(ctx("w_l2 * depth", cid="p-7"),),
                                count=3, seed=4)
        for c in generate_offline(req):
            assert c.parent_ids == ("p-7",)

    def test_feature_hint_biases_leaves(self):
        action = next(a for a in ACTIONS
                      if a.op == "mutation" and a.feature_hint == "depth")
        req = GenerationRequest(op="init", context=(), count=40, seed=9,
                                action=action)
        candidates = generate_offline(req)
        depth_hits = sum(
            1 for c in candidates
            if dsl.features_used(dsl.parse(c.expr_text)) &
            {"depth", "total_layers"})
        assert depth_hits >= 20


class TestGenerateLlm:
    CFG = dict(model_name="mock", api_key_env="QP_TEST_KEY", timeout=5.0,
               max_retries=3)

    def test_fixed_valid_response_yields_count_candidates(self):
        with MockLlmServer() as server:
            cfg = LlmEndpointConfig(base_url=server.base_url, **self.CFG)
            req = GenerationRequest(op="init", context=(), count=3, seed=0)
            out = generate_llm(req, cfg)
        assert len(out) == 3
        assert len({c.id for c in out}) == 3
        assert all(c.expr_text == "(w_l2 * a_entropy)" for c in out)

    def test_garbage_then_valid_retries_once(self):
        with MockLlmServer(script=[MALFORMED_RESPONSE, VALID_RESPONSE]) as server:
            cfg = LlmEndpointConfig(base_url=server.base_url, **self.CFG)
            req = GenerationRequest(op="init", context=(), count=1, seed=0)
            events = []
            out = generate_llm(req, cfg, events=events)
        assert len(out) == 1
        retries = [e for e in events if e["event"] == "retry"]
        assert len(retries) == 1
        assert retries[0]["attempt"] == 0

    def test_persistent_garbage_drops_slot(self):
        with MockLlmServer(script=[MALFORMED_RESPONSE] * 8,
                           default=MALFORMED_RESPONSE) as server:
            cfg = LlmEndpointConfig(base_url=server.base_url, **self.CFG)
            req = GenerationRequest(op="init", context=(), count=1, seed=0)
            events = []
            out = generate_llm(req, cfg, events=events)
        assert out == []
        assert any(e["event"] == "dropped" for e in events)

    def test_unreachable_endpoint_with_fallback(self):
        cfg = LlmEndpointConfig(base_url="http://127.0.0.1:9", max_retries=0,
                                timeout=0.2)
        req = GenerationRequest(op="init", context=(), count=2, seed=5)
        events = []
        out = generate(req, "llm-with-fallback", cfg, events=events)
        assert len(out) == 2            # offline fallback filled the batch
        assert any(e["event"] == "fallback" for e in events)

    def test_unreachable_endpoint_without_fallback_raises(self):
        cfg = LlmEndpointConfig(base_url="http://127.0.0.1:9", max_retries=0,
                                timeout=0.2)
        req = GenerationRequest(op="init", context=(), count=2, seed=5)
        with pytest.raises(EndpointError):
            generate(req, "llm", cfg)

    def test_bearer_token_sent_from_env(self, monkeypatch):
        monkeypatch.setenv("QP_TEST_KEY", "secret-token")
        with MockLlmServer() as server:
            cfg = LlmEndpointConfig(base_url=server.base_url, **self.CFG)
            req = GenerationRequest(op="init", context=(), count=1, seed=0)
            generate_llm(req, cfg)
            assert server.requests[0]["auth"] == "Bearer secret-token"
            assert server.requests[0]["path"] == "/chat/completions"

    def test_temperature_taken_from_action(self):
        action = next(a for a in ACTIONS if a.temperature == 1.1)
        with MockLlmServer() as server:
            cfg = LlmEndpointConfig(base_url=server.base_url, **self.CFG)
            req = GenerationRequest(op="init", context=(), count=1, seed=0,
                                    action=action)
            generate_llm(req, cfg)
            assert server.requests[0]["body"]["temperature"] == 1.1
