import { ApiClient } from "./api.js";
import { domImageLoader, el, type ImageLoader } from "./dom.js";
import { REJECT_REASONS, type RejectReason, type ReviewNext, type Stats } from "./types.js";

const REASON_LABELS: Record<RejectReason, string> = {
  occluded_foreground: "Occluded foreground",
  hue_change: "Hue change",
  object_change: "Object change",
  unrealistic: "Unrealistic",
};

export interface TriageOptions {
  api: ApiClient;
  root: HTMLElement;
  loadImage?: ImageLoader;
}

/** Accept/reject queue for generated composites.
 *
 *  Invariants the tests pin down:
 *  - verdict buttons stay disabled until both the composite and the
 *    reference image have loaded;
 *  - one in-flight submission at a time, so a double-press produces a
 *    single POST;
 *  - every server acknowledgment advances the view exactly once;
 *  - all progress lives server-side — a reload resumes from the next
 *    pending item with nothing lost.
 */
export class TriageController {
  counts = { accepted: 0, rejected: 0 };
  done = false;

  private api: ApiClient;
  private root: HTMLElement;
  private loadImage: ImageLoader;
  private current: ReviewNext | null = null;
  private busy = false;
  private ready = false;
  private maskOn = false;
  private baseline: Stats | null = null;

  private banner!: HTMLElement;
  private itemLabel!: HTMLElement;
  private queueCount!: HTMLElement;
  private stage!: HTMLElement;
  private compositeImg!: HTMLImageElement;
  private referenceImg!: HTMLImageElement;
  private maskImg!: HTMLImageElement;
  private controls!: HTMLElement;
  private verdictButtons: HTMLButtonElement[] = [];
  private maskButton!: HTMLButtonElement;

  constructor(opts: TriageOptions) {
    this.api = opts.api;
    this.root = opts.root;
    this.loadImage = opts.loadImage ?? domImageLoader;
    this.buildSkeleton();
  }

  private buildSkeleton(): void {
    this.banner = el("div", { className: "error-banner", hidden: true });
    this.itemLabel = el("span", { className: "item-label" });
    this.queueCount = el("span", { className: "queue-count" });

    this.compositeImg = el("img", { className: "composite", alt: "composite" }) as HTMLImageElement;
    this.maskImg = el("img", {
      className: "mask-overlay",
      alt: "",
      hidden: true,
    }) as HTMLImageElement;
    this.referenceImg = el("img", { className: "reference", alt: "original" }) as HTMLImageElement;

    this.stage = el(
      "div",
      { className: "stage triage-stage" },
      el(
        "figure",
        {},
        el("div", { className: "img-box" }, this.compositeImg, this.maskImg),
        el("figcaption", {}, "composite"),
      ),
      el(
        "figure",
        {},
        el("div", { className: "img-box" }, this.referenceImg),
        el("figcaption", {}, "original"),
      ),
    );

    const accept = el(
      "button",
      { className: "accept", "data-verdict": "accept", onClick: () => void this.submit("accept") },
      "Accept [a]",
    ) as HTMLButtonElement;
    this.verdictButtons = [accept];
    const rejects = REJECT_REASONS.map((reason, i) => {
      const b = el(
        "button",
        {
          className: "reject",
          "data-reason": reason,
          onClick: () => void this.submit("reject", reason),
        },
        `${REASON_LABELS[reason]} [${i + 1}]`,
      ) as HTMLButtonElement;
      this.verdictButtons.push(b);
      return b;
    });
    this.maskButton = el(
      "button",
      { className: "mask-toggle", onClick: () => this.toggleMask() },
      "Mask overlay [m]",
    ) as HTMLButtonElement;

    this.controls = el("div", { className: "controls" }, accept, ...rejects, this.maskButton);

    this.root.innerHTML = "";
    this.root.appendChild(
      el(
        "section",
        { className: "triage" },
        this.banner,
        el("header", { className: "bar" }, this.itemLabel, this.queueCount),
        this.stage,
        this.controls,
      ),
    );
    this.updateControls();
  }

  async start(): Promise<void> {
    this.baseline = await this.api.stats();
    await this.advance();
  }

  private updateControls(): void {
    const blocked = this.busy || !this.ready || this.current === null;
    for (const b of this.verdictButtons) b.disabled = blocked;
    this.maskButton.disabled = this.current === null;
  }

  private showError(err: unknown): void {
    this.banner.textContent = err instanceof Error ? err.message : String(err);
    this.banner.hidden = false;
  }

  private clearError(): void {
    this.banner.hidden = true;
    this.banner.textContent = "";
  }

  private async advance(): Promise<void> {
    const item = await this.api.reviewNext();
    this.current = item;
    this.ready = false;
    this.updateControls();
    if (item === null) {
      await this.renderDone();
      return;
    }
    this.itemLabel.textContent = item.item_id;
    this.queueCount.textContent = `${item.pending} pending`;
    this.maskImg.src = this.api.url(item.mask_url);
    try {
      await Promise.all([
        this.loadImage(this.api.url(item.composite_url), this.compositeImg),
        this.loadImage(this.api.url(item.real_url), this.referenceImg),
      ]);
    } catch (err) {
      this.showError(err);
      return; // buttons stay disabled; reload recovers, nothing was lost
    }
    this.ready = true;
    this.updateControls();
  }

  async submit(verdict: "accept" | "reject", reason?: RejectReason): Promise<void> {
    if (this.busy || !this.ready || this.current === null) return;
    this.busy = true;
    this.updateControls();
    this.clearError();
    try {
      const ack = await this.api.submitVerdict(this.current.item_id, verdict, reason);
      if (!ack.duplicate) {
        if (verdict === "accept") this.counts.accepted += 1;
        else this.counts.rejected += 1;
      }
    } catch (err) {
      this.showError(err);
      this.busy = false;
      this.updateControls();
      return; // same item stays up for another try
    }
    this.current = null; // nothing submittable until the next item renders
    await this.advance();
    this.busy = false;
    this.updateControls();
  }

  toggleMask(): void {
    this.maskOn = !this.maskOn;
    this.maskImg.hidden = !this.maskOn;
  }

  private async renderDone(): Promise<void> {
    this.done = true;
    const stats = await this.api.stats();
    const base = this.baseline ?? stats;
    const mine = this.counts;
    const reconciled =
      stats.pending === 0 &&
      stats.accepted - base.accepted === mine.accepted &&
      stats.rejected - base.rejected === mine.rejected;
    this.stage.replaceWith(
      el(
        "div",
        { className: "done-panel" },
        el("h2", {}, "Queue complete"),
        el(
          "p",
          { className: "local-counts" },
          `This session: ${mine.accepted} accepted, ${mine.rejected} rejected.`,
        ),
        el(
          "p",
          { className: "server-counts" },
          `Server: ${stats.accepted} accepted, ${stats.rejected} rejected, ` +
            `${stats.pending} pending.`,
        ),
        el(
          "p",
          { className: reconciled ? "reconciled ok" : "reconciled mismatch" },
          reconciled ? "Counts match the server." : "Counts differ from the server!",
        ),
      ),
    );
    this.controls.hidden = true;
    this.itemLabel.textContent = "";
    this.queueCount.textContent = "0 pending";
  }

  /** Returns the submission promise for keys that act, so callers can await. */
  handleKey(key: string): Promise<void> | undefined {
    if (this.done) return undefined;
    if (key === "m") {
      this.toggleMask();
      return undefined;
    }
    if (key === "a") return this.submit("accept");
    const idx = ["1", "2", "3", "4"].indexOf(key);
    if (idx >= 0) return this.submit("reject", REJECT_REASONS[idx]);
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
