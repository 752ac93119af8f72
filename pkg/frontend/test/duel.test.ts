import { afterEach, beforeEach, describe, expect, test } from "vitest";
import { ApiClient } from "../src/api.js";
import { DuelController } from "../src/duel.js";
import {
  httpImageLoader,
  recordingFetch,
  startServer,
  type ServerHandle,
} from "./harness.js";

const METHODS = ["REINHARD_LAB", "XIAO_RGB", "FECKER_HIST"];

let server: ServerHandle;
let root: HTMLElement;

beforeEach(async () => {
  server = await startServer({ pairMethods: METHODS }); // 3 duels
  root = document.createElement("div");
  document.body.appendChild(root);
});

afterEach(async () => {
  root.remove();
  await server.stop();
});

async function readyController(rec = recordingFetch()): Promise<{
  c: DuelController;
  rec: ReturnType<typeof recordingFetch>;
}> {
  const api = new ApiClient({ baseUrl: server.baseUrl, fetchFn: rec.fetchFn });
  const c = new DuelController({ api, root, loadImage: httpImageLoader });
  await c.start();
  return { c, rec };
}

describe("presentation", () => {
  test("two anonymized images render in identical fixed-size boxes", async () => {
    await readyController();
    const boxes = root.querySelectorAll(".duel-stage .duel-box");
    expect(boxes).toHaveLength(2);
    // same class -> same CSS sizing rule -> equal display dimensions
    expect(boxes[0].className).toBe(boxes[1].className);
    const a = root.querySelector<HTMLImageElement>("img.side-a")!;
    const b = root.querySelector<HTMLImageElement>("img.side-b")!;
    expect(a.src).toMatch(/\/img\/duel-a\/task-\d+$/);
    expect(b.src).toMatch(/\/img\/duel-b\/task-\d+$/);
    expect(a.getAttribute("data-loaded-bytes")).toBeTruthy();
    expect(b.getAttribute("data-loaded-bytes")).toBeTruthy();
    expect(root.querySelector(".duel-progress")!.textContent).toContain(
      "0 rated · 2 remaining",
    );
  });

  test("no fetched payload ever names a method", async () => {
    const { c, rec } = await readyController();
    while (!c.done) await c.choose("a");
    for (const body of rec.jsonBodies) {
      for (const m of METHODS) expect(body).not.toContain(m);
    }
    // the choice posts carry only slot letters
    for (const p of rec.posts.filter((p) => p.url.includes("/api/compare/")))
      expect(p.body).toMatch(/^\{"winner":"[ab]"\}$/);
  });
});

describe("choices", () => {
  test("left button posts winner a for the server-assigned left slot", async () => {
    const { rec } = await readyController();
    const left = root.querySelector<HTMLButtonElement>('[data-choice="a"]')!;
    expect(left.disabled).toBe(false);
    left.click();
    for (let i = 0; i < 100 && rec.posts.length < 2; i++)
      await new Promise((r) => setTimeout(r, 20));
    const choicePosts = rec.posts.filter((p) => p.url.includes("/api/compare/"));
    expect(choicePosts).toHaveLength(1);
    expect(choicePosts[0].body).toBe('{"winner":"a"}');
    expect(choicePosts[0].url).toContain("session=");
  });

  test("a double click lands exactly one comparison", async () => {
    const { c, rec } = await readyController();
    const race = Promise.all([c.choose("a"), c.choose("b")]);
    await race;
    expect(rec.posts.filter((p) => p.url.includes("/api/compare/"))).toHaveLength(1);
    expect((await new ApiClient({ baseUrl: server.baseUrl }).stats()).comparisons).toBe(1);
    expect(c.submitted).toBe(1);
  });

  test("keyboard arrows choose sides", async () => {
    const { c } = await readyController();
    await c.handleKey("ArrowLeft");
    await c.handleKey("ArrowRight");
    expect(c.submitted).toBe(2);
    expect(root.querySelector(".duel-progress")!.textContent).toContain("2 rated");
  });

  test("progress counter tracks submitted and remaining", async () => {
    const { c } = await readyController();
    const texts: string[] = [];
    texts.push(root.querySelector(".duel-progress")!.textContent!);
    await c.choose("a");
    texts.push(root.querySelector(".duel-progress")!.textContent!);
    await c.choose("b");
    texts.push(root.querySelector(".duel-progress")!.textContent!);
    expect(texts).toEqual([
      "0 rated · 2 remaining after this",
      "1 rated · 1 remaining after this",
      "2 rated · 0 remaining after this",
    ]);
  });
});

describe("completion", () => {
  test("an exhausted session reconciles its count against the server", async () => {
    const { c } = await readyController();
    while (!c.done) await c.choose("b");
    expect(c.submitted).toBe(3);
    const done = root.querySelector(".done-panel")!;
    expect(done.querySelector(".local-counts")!.textContent).toContain("3 choices");
    expect(done.querySelector(".server-counts")!.textContent).toContain("3 comparisons");
    expect(done.querySelector(".reconciled")!.classList.contains("ok")).toBe(true);
    // choices stay disabled-by-absence: the controls bar is gone
    expect(root.querySelector<HTMLElement>(".duel .controls")!.hidden).toBe(true);
  });

  test("two sequential raters fill separate sessions against shared duels", async () => {
    const { c: first } = await readyController();
    while (!first.done) await first.choose("a");
    root.innerHTML = "";
    const { c: second } = await readyController();
    while (!second.done) await second.choose("b");
    const api = new ApiClient({ baseUrl: server.baseUrl });
    const stats = await api.stats();
    expect(stats.comparisons).toBe(6);
    expect(stats.served).toBe(6); // every duel served exactly twice
    const rows = await api.exportComparisons();
    expect(rows).toHaveLength(6);
  });
});
