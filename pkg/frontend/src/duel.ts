import { ApiClient } from "./api.js";
import { domImageLoader, el, type ImageLoader } from "./dom.js";
import type { CompareNext, Stats } from "./types.js";

export interface DuelOptions {
  api: ApiClient;
  root: HTMLElement;
  loadImage?: ImageLoader;
}

/** Side-by-side pairwise rating of anonymized composites.
 *
 *  The payloads carry only a task id and two image URLs; which method made
 *  which image stays on the server, and the left/right placement is the
 *  server's (it randomizes and logs it per serving). Both slots share one
 *  fixed-size box class so the images always render at identical display
 *  dimensions. Same submission discipline as triage: load-gated buttons,
 *  one in-flight request, each acknowledgment advances exactly once.
 */
export class DuelController {
  submitted = 0;
  done = false;
  sessionId: string | null = null;

  private api: ApiClient;
  private root: HTMLElement;
  private loadImage: ImageLoader;
  private current: CompareNext | null = null;
  private busy = false;
  private ready = false;
  private baseline: Stats | null = null;

  private banner!: HTMLElement;
  private progress!: HTMLElement;
  private stage!: HTMLElement;
  private imgA!: HTMLImageElement;
  private imgB!: HTMLImageElement;
  private controls!: HTMLElement;
  private buttons: HTMLButtonElement[] = [];

  constructor(opts: DuelOptions) {
    this.api = opts.api;
    this.root = opts.root;
    this.loadImage = opts.loadImage ?? domImageLoader;
    this.buildSkeleton();
  }

  private buildSkeleton(): void {
    this.banner = el("div", { className: "error-banner", hidden: true });
    this.progress = el("span", { className: "duel-progress" });
    this.imgA = el("img", { className: "side-a", alt: "left image" }) as HTMLImageElement;
    this.imgB = el("img", { className: "side-b", alt: "right image" }) as HTMLImageElement;
    this.stage = el(
      "div",
      { className: "stage duel-stage" },
      el("div", { className: "duel-box" }, this.imgA),
      el("div", { className: "duel-box" }, this.imgB),
    );
    const left = el(
      "button",
      { className: "choose", "data-choice": "a", onClick: () => void this.choose("a") },
      "Left is more realistic [←]",
    ) as HTMLButtonElement;
    const right = el(
      "button",
      { className: "choose", "data-choice": "b", onClick: () => void this.choose("b") },
      "Right is more realistic [→]",
    ) as HTMLButtonElement;
    this.buttons = [left, right];
    this.controls = el("div", { className: "controls" }, left, right);

    this.root.innerHTML = "";
    this.root.appendChild(
      el(
        "section",
        { className: "duel" },
        this.banner,
        el("header", { className: "bar" }, el("span", {}, "Which looks more real?"), this.progress),
        this.stage,
        this.controls,
      ),
    );
    this.updateControls();
  }

  async start(): Promise<void> {
    this.baseline = await this.api.stats();
    this.sessionId = await this.api.openSession();
    await this.advance();
  }

  private updateControls(): void {
    const blocked = this.busy || !this.ready || this.current === null;
    for (const b of this.buttons) b.disabled = blocked;
  }

  private showError(err: unknown): void {
    this.banner.textContent = err instanceof Error ? err.message : String(err);
    this.banner.hidden = false;
  }

  private async advance(): Promise<void> {
    if (this.sessionId === null) throw new Error("start() first");
    const task = await this.api.compareNext(this.sessionId);
    this.current = task;
    this.ready = false;
    this.updateControls();
    if (task === null) {
      await this.renderDone();
      return;
    }
    this.progress.textContent = `${this.submitted} rated · ${task.remaining} remaining after this`;
    try {
      await Promise.all([
        this.loadImage(this.api.url(task.image_a_url), this.imgA),
        this.loadImage(this.api.url(task.image_b_url), this.imgB),
      ]);
    } catch (err) {
      this.showError(err);
      return;
    }
    this.ready = true;
    this.updateControls();
  }

  async choose(winner: "a" | "b"): Promise<void> {
    if (this.busy || !this.ready || this.current === null || this.sessionId === null) return;
    this.busy = true;
    this.updateControls();
    this.banner.hidden = true;
    try {
      const ack = await this.api.submitChoice(this.current.task_id, this.sessionId, winner);
      if (!ack.duplicate) this.submitted += 1;
    } catch (err) {
      this.showError(err);
      this.busy = false;
      this.updateControls();
      return;
    }
    this.current = null;
    await this.advance();
    this.busy = false;
    this.updateControls();
  }

  private async renderDone(): Promise<void> {
    this.done = true;
    const stats = await this.api.stats();
    const base = this.baseline ?? stats;
    const reconciled = stats.comparisons - base.comparisons === this.submitted;
    this.stage.replaceWith(
      el(
        "div",
        { className: "done-panel" },
        el("h2", {}, "All pairs rated"),
        el("p", { className: "local-counts" }, `This session: ${this.submitted} choices.`),
        el(
          "p",
          { className: "server-counts" },
          `Server holds ${stats.comparisons} comparisons across all sessions.`,
        ),
        el(
          "p",
          { className: reconciled ? "reconciled ok" : "reconciled mismatch" },
          reconciled ? "Counts match the server." : "Counts differ from the server!",
        ),
      ),
    );
    this.controls.hidden = true;
    this.progress.textContent = `${this.submitted} rated · 0 remaining`;
  }

  handleKey(key: string): Promise<void> | undefined {
    if (this.done) return undefined;
    if (key === "ArrowLeft" || key === "1") return this.choose("a");
    if (key === "ArrowRight" || key === "2") return this.choose("b");
    return undefined;
  }

  bindKeys(target: Document): () => void {
    const listener = (e: Event): void => {
      void this.handleKey((e as KeyboardEvent).key);
    };
    target.addEventListener("keydown", listener);
    return () => target.removeEventListener("keydown", listener);
  }
}
