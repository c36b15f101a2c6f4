#!/usr/bin/env python3
"""Regenerate the bundled replay fixtures.

Runs the engine against fully scripted providers and records every provider
exchange into fixtures/<run>/<provider>/. Each scenario is recorded under the
default configuration and under every ablation, so ablated replays are
hermetic too. Scripted replies are keyed on stable prompt markers (the query
for decomposition, the iteration number for planning, the task description
for everything else), which makes the recording independent of the
uncertainty values embedded in prompt bodies.
"""

from __future__ import annotations

import json
import re
import shutil
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from helicase.config import ABLATIONS, RunConfig  # noqa: E402
from helicase.engine import run  # noqa: E402
from helicase.providers import (  # noqa: E402
    HashingEmbedder,
    ProviderSuite,
    build_recording_suite,
)

FIXTURE_ROOT = Path(__file__).resolve().parent.parent / "fixtures"

_TASK_RE = re.compile(r"Task: (.+)")
_ITER_RE = re.compile(r"Iteration: (\d+)")
_URL_RE = re.compile(r"\[(https?://[^\]]+)\]")


@dataclass
class Scenario:
    query: str
    final_answer: str
    plans: dict[int, list[dict]]  # 0 = initial decomposition, t >= 2 = replans
    mutations: dict[str, list[dict]]  # coding action description -> mutation array
    judge_u: dict[str, float]  # action description -> consensus uncertainty
    answers: dict[str, str] = field(default_factory=dict)
    conclusions: dict[str, str] = field(default_factory=dict)
    difficulty: dict[str, str] = field(default_factory=dict)
    paraphrases: dict[str, list[str]] = field(default_factory=dict)

    def answer_for(self, desc: str) -> str:
        return self.answers.get(desc, f"Consolidated finding: {desc.lower()}.")


class ScriptedChat:
    def __init__(self, scenario: Scenario):
        self.s = scenario

    def complete(self, messages, model: str) -> str:
        text = messages[0]["content"]
        if "Decompose the query below" in text:
            return json.dumps(self.s.plans[0])
        if "Rate how many parallel web searches" in text:
            return self.s.difficulty.get(self._task(text), "1")
        if "search query variants" in text:
            return json.dumps(self.s.paraphrases[self._task(text)])
        if "Answer the investigation task" in text:
            return json.dumps(
                {
                    "answer": self.s.answer_for(self._task(text)),
                    "sources": _URL_RE.findall(text),
                }
            )
        if "Merge the following answers" in text:
            return self.s.answer_for(self._task(text))
        if "Synthesize the evidence below" in text:
            return self.s.conclusions[self._task(text)]
        if "Translate the findings below" in text:
            return json.dumps(self.s.mutations[self._task(text)])
        if "Propose the next candidate actions" in text:
            t = int(_ITER_RE.search(text).group(1))
            return json.dumps(self.s.plans.get(t, []))
        if "Answer the original query using the knowledge graph" in text:
            return self.s.final_answer
        raise RuntimeError(f"scripted chat has no reply for prompt: {text[:120]!r}")

    @staticmethod
    def _task(text: str) -> str:
        return _TASK_RE.search(text).group(1).strip()


class ScriptedSearch:
    HOSTS = (
        "supplychain-news.example.com",
        "industry-filings.example.org",
        "trade-data.example.net",
    )

    def search(self, query: str) -> list[dict]:
        slug = re.sub(r"[^a-z0-9]+", "-", query.lower()).strip("-")[:60]
        results = []
        for i in range(2):
            host = self.HOSTS[(len(slug) + i) % len(self.HOSTS)]
            results.append(
                {
                    "title": f"{query} ({i + 1})",
                    "url": f"https://{host}/{slug}-{i + 1}",
                    "snippet": f"Coverage of {query.lower()}.",
                }
            )
        return results


class ScriptedReader:
    def read(self, url: str) -> dict:
        return {"text": f"Detailed industry report retrieved from {url}.",
                "modality": "html"}


class ScriptedJudge:
    def __init__(self, scenario: Scenario):
        self.s = scenario

    def assess(self, description: str, results: list[str]) -> str:
        return f"UNCERTAINTY: {self.s.judge_u[description]:.2f}"


def scripted_suite(scenario: Scenario) -> ProviderSuite:
    return ProviderSuite(
        chat=ScriptedChat(scenario),
        search=ScriptedSearch(),
        reader=ScriptedReader(),
        embedder=HashingEmbedder(),
        judge=ScriptedJudge(scenario),
    )


# Mutation shorthands.


def ent(label, node_type, support):
    return {"op": "add_entity", "label": label, "node_type": node_type,
            "support": support}


def edge(head, relation, tail, support):
    return {"op": "add_edge", "head": head, "relation": relation, "tail": tail,
            "support": support}


def confirm_all(entities, edges, support):
    """Re-assert existing facts so the accumulation rule compounds them."""
    muts = [ent(label, node_type, support) for label, node_type in entities]
    muts += [edge(h, r, t, support) for h, r, t in edges]
    return muts


def ws(description):
    return {"description": description, "agent_type": "web_search"}


def rs(description):
    return {"description": description, "agent_type": "reasoning"}


def cd(description):
    return {"description": description, "agent_type": "coding"}


# ---------------------------------------------------------------------------
# Scenario: Tesla lithium supply chain (Q64)
# ---------------------------------------------------------------------------

Q64_MINERS = ["Pilbara Minerals", "Mineral Resources", "IGO Limited",
              "Allkem", "Core Lithium"]
Q64_REFINERS = ["Tianqi Lithium", "Ganfeng Lithium", "Albemarle",
                "Yahua Group", "CNGR Advanced Material"]
Q64_CELLS = ["Panasonic", "CATL", "LG Energy Solution"]
Q64_FACTORIES = ["Gigafactory Nevada", "Gigafactory Shanghai",
                 "Gigafactory Berlin", "Gigafactory Texas"]
Q64_PRODUCTS = ["Model 3", "Model Y", "Cybertruck", "Powerwall", "Megapack"]
Q64_FACILITIES = ["Kwinana Refinery", "Kemerton Lithium Plant",
                  "Zhangjiagang Lithium Plant"]


def build_q64() -> Scenario:
    d_mines = "Identify Australian lithium mining companies supplying spodumene concentrate"
    d_factories = "Map Tesla Gigafactories and the products each assembles"
    d_cells = "Identify battery cell manufacturers supplying Tesla Gigafactories"
    c_init = "Record initial supply chain entities and relations in the knowledge graph"
    d_refiners = "Identify lithium refiners processing Australian spodumene"
    d_offtake = "Trace offtake agreements linking Australian miners to lithium refiners"
    d_facility = "Check operational status of new lithium refining facilities"
    d_reverify = "Re-verify established mining, factory and product relations"
    c_refiners = "Update the knowledge graph with refiner tier and facility findings"
    d_direct = "Verify the reported direct lithium supply from Ganfeng Lithium to Tesla"
    d_routes = "Survey additional battery cell supply routes into Tesla factories"
    c_routes = "Extend the knowledge graph with verified supply routes"
    r_flow = "Cross-check lithium flow from Australian mines through refiners to Tesla products"
    d_downstream = "Re-verify downstream assembly and sales relations"
    c_downstream = "Consolidate downstream confirmations into the knowledge graph"
    d_final = "Final verification sweep over remaining uncertain supply relations"
    c_final = "Record final verification results in the knowledge graph"

    iter1_entities = (
        [("Spodumene concentrate", "raw_material"),
         ("Lithium hydroxide", "raw_material")]
        + [(m, "mining_company") for m in Q64_MINERS]
        + [(c, "cell_manufacturer") for c in Q64_CELLS]
        + [(f, "factory") for f in Q64_FACTORIES]
        + [("Tesla", "oem")]
        + [(p, "product") for p in Q64_PRODUCTS]
    )
    iter1_edges_s1 = (
        [(m, "produces", "Spodumene concentrate") for m in Q64_MINERS]
        + [("Spodumene concentrate", "refined into", "Lithium hydroxide")]
    )
    iter1_edges_s3 = [
        ("Panasonic", "supplies cells to", "Gigafactory Nevada"),
        ("CATL", "supplies cells to", "Gigafactory Shanghai"),
        ("LG Energy Solution", "supplies cells to", "Gigafactory Berlin"),
    ]
    assembles = [
        ("Gigafactory Shanghai", "assembles", "Model 3"),
        ("Gigafactory Shanghai", "assembles", "Model Y"),
        ("Gigafactory Berlin", "assembles", "Model Y"),
        ("Gigafactory Texas", "assembles", "Model Y"),
        ("Gigafactory Texas", "assembles", "Cybertruck"),
        ("Gigafactory Nevada", "assembles", "Powerwall"),
        ("Gigafactory Nevada", "assembles", "Megapack"),
    ]
    sells = [("Tesla", "sells", p) for p in Q64_PRODUCTS]
    iter1_edges_s2 = (
        [("Tesla", "operates", f) for f in Q64_FACTORIES] + assembles + sells
    )

    s1, s2, s3 = ["t0-a1"], ["t0-a2"], ["t0-a3"]
    mut_init = (
        [ent(label, nt, s1) for label, nt in iter1_entities[:7]]
        + [ent(label, nt, s3) for label, nt in iter1_entities[7:10]]
        + [ent(label, nt, s2) for label, nt in iter1_entities[10:]]
        + [edge(h, r, t, s1) for h, r, t in iter1_edges_s1]
        + [edge(h, r, t, s3) for h, r, t in iter1_edges_s3]
        + [edge(h, r, t, s2) for h, r, t in iter1_edges_s2]
    )

    a, b, f3, v = ["t2-a1"], ["t2-a2"], ["t2-a3"], ["t2-a4"]
    mining_edges = [
        ("Pilbara Minerals", "supplies spodumene to", "Ganfeng Lithium"),
        ("Pilbara Minerals", "supplies spodumene to", "Yahua Group"),
        ("Pilbara Minerals", "supplies spodumene to", "CNGR Advanced Material"),
        ("IGO Limited", "joint venture with", "Tianqi Lithium"),
        ("Mineral Resources", "supplies spodumene to", "Albemarle"),
        ("Core Lithium", "supplies spodumene to", "Yahua Group"),
    ]
    mut_refiners = (
        [ent(r, "refiner", a) for r in Q64_REFINERS]
        + [ent(fac, "facility", f3) for fac in Q64_FACILITIES]
        + [edge(h, r, t, b) for h, r, t in mining_edges]
        + [edge("Ganfeng Lithium", "supplies lithium to", "Tesla", b)]
        + [edge("Tianqi Lithium", "operates", "Kwinana Refinery", a),
           edge("Albemarle", "operates", "Kemerton Lithium Plant", a),
           edge("Ganfeng Lithium", "operates", "Zhangjiagang Lithium Plant", a),
           edge("Tianqi Lithium", "supplies lithium hydroxide to", "Panasonic", a),
           edge("Ganfeng Lithium", "supplies lithium hydroxide to", "CATL", a)]
        + confirm_all(iter1_entities,
                      iter1_edges_s1 + iter1_edges_s3 + iter1_edges_s2, v)
    )

    w, x = ["t3-a2"], ["t3-a1"]
    mut_routes = (
        [edge("CATL", "supplies cells to", "Gigafactory Berlin", w),
         edge("LG Energy Solution", "supplies cells to", "Gigafactory Texas", w),
         edge("Panasonic", "supplies cells to", "Gigafactory Texas", w),
         edge("CATL", "supplies cells to", "Tesla", w),
         edge("Panasonic", "supplies cells to", "Tesla", w),
         edge("LG Energy Solution", "supplies cells to", "Tesla", w),
         edge("Gigafactory Shanghai", "assembles", "Megapack", w),
         edge("Ganfeng Lithium", "refines", "Lithium hydroxide", w)]
        + [edge("Ganfeng Lithium", "supplies lithium to", "Tesla", x),
           edge("Tianqi Lithium", "supplies lithium hydroxide to", "Panasonic", x),
           edge("Ganfeng Lithium", "supplies lithium hydroxide to", "CATL", x)]
    )

    y = ["t4-a2"]
    mut_downstream = confirm_all(
        [(p, "product") for p in Q64_PRODUCTS],
        assembles + sells + [("Panasonic", "supplies cells to", "Gigafactory Nevada")],
        y,
    )

    z = ["t5-a1"]
    mut_final = confirm_all(
        [("Spodumene concentrate", "raw_material"),
         ("Lithium hydroxide", "raw_material"), ("Allkem", "mining_company")],
        iter1_edges_s1
        + [("Ganfeng Lithium", "supplies lithium to", "Tesla"),
           ("Tianqi Lithium", "supplies lithium hydroxide to", "Panasonic"),
           ("Ganfeng Lithium", "supplies lithium hydroxide to", "CATL"),
           ("Ganfeng Lithium", "refines", "Lithium hydroxide")],
        z,
    )

    return Scenario(
        query="Which Tesla components use lithium from Australian mines?",
        final_answer=(
            "Australian lithium reaches Tesla products through a multi-tier "
            "chain: Pilbara Minerals, Mineral Resources, IGO Limited, Allkem "
            "and Core Lithium produce Spodumene concentrate, which refiners "
            "including Tianqi Lithium, Ganfeng Lithium, Albemarle, Yahua Group "
            "and CNGR Advanced Material convert to Lithium hydroxide. Battery "
            "cells from Panasonic, CATL and LG Energy Solution feed Gigafactory "
            "Nevada, Gigafactory Shanghai, Gigafactory Berlin and Gigafactory "
            "Texas, where Tesla assembles Model 3, Model Y, Cybertruck, "
            "Powerwall and Megapack. A reported direct supply relationship "
            "links Ganfeng Lithium to Tesla."
        ),
        plans={
            0: [ws(d_mines), ws(d_factories), ws(d_cells), cd(c_init)],
            2: [ws(d_refiners), ws(d_offtake), ws(d_facility), ws(d_reverify),
                cd(c_refiners)],
            3: [ws(d_direct), ws(d_routes), cd(c_routes)],
            4: [rs(r_flow), ws(d_downstream), cd(c_downstream)],
            5: [ws(d_final), cd(c_final)],
        },
        mutations={
            c_init: mut_init,
            c_refiners: mut_refiners,
            c_routes: mut_routes,
            c_downstream: mut_downstream,
            c_final: mut_final,
        },
        judge_u={
            d_mines: 0.50, d_factories: 0.20, d_cells: 0.30,
            d_refiners: 0.20, d_offtake: 0.31, d_facility: 0.71,
            d_reverify: 0.08, d_direct: 0.65, d_routes: 0.05,
            r_flow: 0.60, d_downstream: 0.30, d_final: 0.90,
        },
        answers={
            d_mines: (
                "Pilbara Minerals, Mineral Resources, IGO Limited, Allkem and "
                "Core Lithium mine spodumene concentrate in Western Australia."
            ),
            d_factories: (
                "Tesla operates Gigafactories in Nevada, Shanghai, Berlin and "
                "Texas, assembling Model 3, Model Y, Cybertruck, Powerwall and "
                "Megapack."
            ),
            d_cells: (
                "Panasonic supplies Gigafactory Nevada, CATL supplies "
                "Gigafactory Shanghai, LG Energy Solution supplies Gigafactory "
                "Berlin."
            ),
            d_facility: (
                "The Kwinana Refinery, Kemerton Lithium Plant and Zhangjiagang "
                "Lithium Plant have unconfirmed operational status."
            ),
        },
        conclusions={
            r_flow: (
                "Spodumene from Australian miners flows through Chinese and "
                "Western refiners to cell manufacturers and on to every Tesla "
                "product line; the Ganfeng-to-Tesla direct route bypasses the "
                "cell tier."
            ),
        },
        difficulty={d_mines: "2"},
        paraphrases={
            d_mines: [
                "Australian spodumene concentrate producers list",
                "Western Australia lithium mining companies Tesla supply chain",
            ],
        },
    )


# ---------------------------------------------------------------------------
# Scenario: P&G hair care formulations (Q17)
# ---------------------------------------------------------------------------

Q17_PRODUCTS_BIOTIN = [
    "Pantene Repair and Protect Shampoo",
    "Pantene Miracle Rescue Mask",
    "Herbal Essences Bio Renew Argan Oil Shampoo",
    "Herbal Essences Bio Renew Coconut Milk Conditioner",
    "Head and Shoulders Supreme Moisture Shampoo",
    "Pantene Nutrient Blends Vitamin B Serum",
]
Q17_PRODUCTS_PANTHENOL_ONLY = [
    "Pantene Daily Moisture Renewal Conditioner",
    "Head and Shoulders Clinical Strength Conditioner",
]
Q17_PRODUCTS = Q17_PRODUCTS_BIOTIN + Q17_PRODUCTS_PANTHENOL_ONLY


def build_q17() -> Scenario:
    p_panth = "Identify Procter and Gamble hair care products formulated with panthenol"
    p_biotin = "Identify which of those products also contain biotin and who supplies the biotin"
    p_suppliers = "Identify panthenol suppliers and intermediary distributors serving Procter and Gamble"
    c_init = "Record products, ingredients, suppliers and distributors in the knowledge graph"
    q_secondary = "Verify secondary sourcing routes for panthenol and biotin"
    q_formulation = "Re-verify product formulation claims against published ingredient lists"
    c_secondary = "Update the knowledge graph with secondary sourcing findings"
    q_shared = "Trace shared supplier dependencies across the Pantene, Herbal Essences and Head and Shoulders lines"
    q_biotin_trade = "Re-verify biotin supplier relationships with trade data"
    c_shared = "Add shared supplier findings to the knowledge graph"
    q_final = "Final re-verification of panthenol supplier and distributor relations"
    c_final = "Record final verification results in the knowledge graph"

    sa, sb, sc = ["t0-a1"], ["t0-a2"], ["t0-a3"]
    mut_init = (
        [ent(p, "product", sa) for p in Q17_PRODUCTS]
        + [ent("Panthenol", "ingredient", sa), ent("Biotin", "ingredient", sb),
           ent("Lonza", "supplier", sb), ent("Zhejiang NHU", "supplier", sb),
           ent("Kyowa Hakko", "supplier", sb),
           ent("DSM-Firmenich", "supplier", sc), ent("BASF", "supplier", sc),
           ent("Azelis", "distributor", sc), ent("Brenntag", "distributor", sc)]
        + [edge(p, "contains", "Panthenol", sa) for p in Q17_PRODUCTS]
        + [edge(p, "contains", "Biotin", sb) for p in Q17_PRODUCTS_BIOTIN]
        + [edge("Lonza", "supplies", "Biotin", sb),
           edge("Zhejiang NHU", "supplies", "Biotin", sb),
           edge("DSM-Firmenich", "supplies", "Panthenol", sc),
           edge("BASF", "supplies", "Panthenol", sc),
           edge("Kyowa Hakko", "supplies", "Panthenol", sc),
           edge("Azelis", "distributes for", "DSM-Firmenich", sc),
           edge("Azelis", "distributes for", "Lonza", sc),
           edge("Brenntag", "distributes for", "BASF", sc),
           edge("Brenntag", "distributes for", "Zhejiang NHU", sc)]
    )

    n2, v2 = ["t2-a1"], ["t2-a2"]
    mut_secondary = (
        [edge("DSM-Firmenich", "supplies", "Biotin", n2),
         edge("Lonza", "supplies", "Panthenol", n2),
         edge("Brenntag", "distributes for", "Kyowa Hakko", n2),
         edge("Azelis", "distributes for", "BASF", n2)]
        + confirm_all([(p, "product") for p in Q17_PRODUCTS_BIOTIN],
                      [(p, "contains", "Biotin") for p in Q17_PRODUCTS_BIOTIN],
                      v2)
    )

    n3, v3 = ["t3-a1"], ["t3-a2"]
    mut_shared = (
        [edge("Azelis", "distributes for", "Zhejiang NHU", n3),
         edge("Kyowa Hakko", "supplies", "Biotin", n3)]
        + confirm_all(
            [("Lonza", "supplier"), ("Zhejiang NHU", "supplier"),
             ("Kyowa Hakko", "supplier"), ("Biotin", "ingredient")],
            [("Lonza", "supplies", "Biotin"),
             ("Zhejiang NHU", "supplies", "Biotin"),
             ("Azelis", "distributes for", "Lonza"),
             ("Brenntag", "distributes for", "Zhejiang NHU"),
             ("Brenntag", "distributes for", "Kyowa Hakko"),
             ("Kyowa Hakko", "supplies", "Panthenol"),
             ("DSM-Firmenich", "supplies", "Biotin")],
            v3)
    )

    v4 = ["t4-a1"]
    mut_final = confirm_all(
        [("DSM-Firmenich", "supplier"), ("BASF", "supplier"),
         ("Azelis", "distributor"), ("Brenntag", "distributor"),
         ("Panthenol", "ingredient")],
        [("DSM-Firmenich", "supplies", "Panthenol"),
         ("BASF", "supplies", "Panthenol"),
         ("Azelis", "distributes for", "DSM-Firmenich"),
         ("Brenntag", "distributes for", "BASF"),
         ("Azelis", "distributes for", "BASF"),
         ("Lonza", "supplies", "Panthenol")],
        v4,
    )

    return Scenario(
        query=(
            "List all Procter & Gamble hair care products that contain both "
            "panthenol and biotin, and identify their shared ingredient "
            "suppliers."
        ),
        final_answer=(
            "Six P&G hair care products contain both panthenol and biotin: "
            "Pantene Repair and Protect Shampoo, Pantene Miracle Rescue Mask, "
            "Herbal Essences Bio Renew Argan Oil Shampoo, Herbal Essences Bio "
            "Renew Coconut Milk Conditioner, Head and Shoulders Supreme "
            "Moisture Shampoo and Pantene Nutrient Blends Vitamin B Serum. "
            "Panthenol concentrates on DSM-Firmenich and BASF, biotin on Lonza "
            "and Zhejiang NHU, with Kyowa Hakko as a secondary source; Azelis "
            "and Brenntag act as intermediary distributors."
        ),
        plans={
            0: [ws(p_panth), ws(p_biotin), ws(p_suppliers), cd(c_init)],
            2: [ws(q_secondary), ws(q_formulation), cd(c_secondary)],
            3: [ws(q_shared), ws(q_biotin_trade), cd(c_shared)],
            4: [ws(q_final), cd(c_final)],
        },
        mutations={
            c_init: mut_init,
            c_secondary: mut_secondary,
            c_shared: mut_shared,
            c_final: mut_final,
        },
        judge_u={
            p_panth: 0.15, p_biotin: 0.24, p_suppliers: 0.22,
            q_secondary: 0.20, q_formulation: 0.90,
            q_shared: 0.15, q_biotin_trade: 0.90, q_final: 0.90,
        },
        answers={
            p_panth: (
                "Eight P&G products across Pantene, Herbal Essences and Head "
                "and Shoulders list panthenol on their ingredient labels."
            ),
            p_biotin: (
                "Six of the panthenol products also contain biotin, supplied "
                "by Lonza, Zhejiang NHU and Kyowa Hakko."
            ),
            p_suppliers: (
                "DSM-Firmenich and BASF supply panthenol; Azelis and Brenntag "
                "act as intermediary distributors."
            ),
        },
    )


# ---------------------------------------------------------------------------


def generate(root: Path) -> None:
    scenarios = [("q64", build_q64()), ("q17", build_q17())]
    for name, scenario in scenarios:
        fdir = root / name
        if fdir.exists():
            shutil.rmtree(fdir)
        fdir.mkdir(parents=True)
        with open(fdir / "meta.json", "w", encoding="utf-8") as fh:
            json.dump({"query": scenario.query}, fh, indent=1, sort_keys=True)
            fh.write("\n")
        for variant in ("baseline",) + ABLATIONS:
            config = RunConfig()
            if variant != "baseline":
                config.apply_ablation(variant)
            suite = build_recording_suite(scripted_suite(scenario), fdir)
            with tempfile.TemporaryDirectory() as tmp:
                result = run(scenario.query, config, suite, tmp)
            print(
                f"{name} [{variant}]: {result.iterations_run} iterations "
                f"({result.converged_by}), {len(result.final_graph.nodes)} nodes, "
                f"{len(result.final_graph.edges)} edges, trace "
                f"{[round(u, 6) for u in result.u_memory_trace]}"
            )


if __name__ == "__main__":
    generate(FIXTURE_ROOT)
