import { ApiClient } from "./api.js";
import { el } from "./dom.js";
import { DuelController } from "./duel.js";
import { TriageController } from "./triage.js";

// Entry point for the served page. All state lives on the server, so each
// tab switch just builds a fresh controller and lets it resume.

const api = new ApiClient();

let unbind: (() => void) | null = null;

function activate(which: "triage" | "duel"): void {
  const view = document.querySelector<HTMLElement>("#view");
  if (!view) return;
  if (unbind) unbind();
  document.querySelectorAll(".nav button").forEach((b) => {
    b.classList.toggle("active", b.getAttribute("data-tab") === which);
  });
  if (which === "triage") {
    const c = new TriageController({ api, root: view });
    unbind = c.bindKeys(document);
    void c.start().catch(showFatal);
  } else {
    const c = new DuelController({ api, root: view });
    unbind = c.bindKeys(document);
    void c.start().catch(showFatal);
  }
}

function showFatal(err: unknown): void {
  const view = document.querySelector<HTMLElement>("#view");
  if (!view) return;
  view.innerHTML = "";
  view.appendChild(
    el(
      "div",
      { className: "error-banner" },
      `Cannot reach the review service: ${err instanceof Error ? err.message : String(err)}`,
    ),
  );
}

async function refreshFooter(): Promise<void> {
  const footer = document.querySelector<HTMLElement>("#stats-footer");
  if (!footer) return;
  try {
    const s = await api.stats();
    footer.textContent =
      `${s.pending}/${s.items} items pending · ${s.accepted} accepted · ` +
      `${s.rejected} rejected · ${s.comparisons} comparisons over ${s.duels} duels`;
  } catch {
    footer.textContent = "service unreachable";
  }
}

export function init(): void {
  document.querySelectorAll(".nav button").forEach((b) => {
    b.addEventListener("click", () => {
      activate(b.getAttribute("data-tab") as "triage" | "duel");
      void refreshFooter();
    });
  });
  activate("triage");
  void refreshFooter();
  setInterval(() => void refreshFooter(), 10_000);
}

init();
