// Spawns the real review service against a generated dataset so the
// controllers are exercised over actual HTTP.
import { execFileSync, spawn, type ChildProcess } from "node:child_process";
import { mkdtempSync, rmSync } from "node:fs";
import net from "node:net";
import { tmpdir } from "node:os";
import path from "node:path";
import { fileURLToPath } from "node:url";

const FIXTURE = path.join(
  path.dirname(fileURLToPath(import.meta.url)),
  "fixtures",
  "make_dataset.py",
);

export interface ServerHandle {
  baseUrl: string;
  dir: string;
  stop(): Promise<void>;
}

function freePort(): Promise<number> {
  return new Promise((resolve, reject) => {
    const srv = net.createServer();
    srv.listen(0, "127.0.0.1", () => {
      const port = (srv.address() as net.AddressInfo).port;
      srv.close(() => resolve(port));
    });
    srv.on("error", reject);
  });
}

async function waitReady(baseUrl: string, proc: ChildProcess, stderr: string[]): Promise<void> {
  for (let i = 0; i < 200; i++) {
    if (proc.exitCode !== null)
      throw new Error(`server exited early:\n${stderr.join("")}`);
    try {
      const res = await fetch(`${baseUrl}/api/stats`);
      if (res.ok) {
        await res.json();
        return;
      }
    } catch {
      // not listening yet
    }
    await new Promise((r) => setTimeout(r, 100));
  }
  throw new Error(`server never became ready:\n${stderr.join("")}`);
}

export async function startServer(opts: {
  pairMethods?: string[];
  singles?: number;
}): Promise<ServerHandle> {
  const dir = mkdtempSync(path.join(tmpdir(), "review-ui-"));
  const dataDir = path.join(dir, "data");
  execFileSync("python3", [
    FIXTURE,
    dataDir,
    "--pair-methods",
    (opts.pairMethods ?? []).join(","),
    "--singles",
    String(opts.singles ?? 0),
  ]);
  const port = await freePort();
  const stderr: string[] = [];
  const proc = spawn(
    "harmonytk",
    [
      "serve",
      "--state", path.join(dir, "state"),
      "--dataset", dataDir,
      "--manifest", path.join(dataDir, "manifest.jsonl"),
      "--port", String(port),
    ],
    { stdio: ["ignore", "ignore", "pipe"] },
  );
  proc.stderr!.on("data", (chunk: Buffer) => stderr.push(chunk.toString()));
  const baseUrl = `http://127.0.0.1:${port}`;
  await waitReady(baseUrl, proc, stderr);
  return {
    baseUrl,
    dir,
    stop: () =>
      new Promise<void>((resolve) => {
        proc.once("exit", () => {
          rmSync(dir, { recursive: true, force: true });
          resolve();
        });
        proc.kill("SIGTERM");
      }),
  };
}

/** fetch wrapper that tallies calls and captures every JSON response body,
 *  for the no-duplicates and no-method-leak assertions. */
export interface RecordingFetch {
  fetchFn: typeof fetch;
  posts: Array<{ url: string; body: string }>;
  jsonBodies: string[];
}

export function recordingFetch(): RecordingFetch {
  const posts: Array<{ url: string; body: string }> = [];
  const jsonBodies: string[] = [];
  const fetchFn: typeof fetch = async (input, init) => {
    const url = String(input);
    if ((init?.method ?? "GET").toUpperCase() === "POST")
      posts.push({ url, body: typeof init?.body === "string" ? init.body : "" });
    const res = await fetch(input, init);
    const ctype = res.headers.get("content-type") ?? "";
    if (ctype.includes("json")) {
      const clone = res.clone();
      jsonBodies.push(await clone.text());
    }
    return res;
  };
  return { fetchFn, posts, jsonBodies };
}

/** Image loader for jsdom: pulls the actual bytes over HTTP and checks they
 *  are a PNG, which is as close to "the image loaded" as a DOM-less
 *  environment gets. */
export async function httpImageLoader(url: string, img: HTMLImageElement): Promise<void> {
  const res = await fetch(url);
  if (!res.ok) throw new Error(`image failed to load: ${url} (${res.status})`);
  const bytes = new Uint8Array(await res.arrayBuffer());
  const png = bytes.length > 8 && bytes[0] === 0x89 && bytes[1] === 0x50;
  if (!png) throw new Error(`not a PNG: ${url}`);
  img.setAttribute("src", url);
  img.setAttribute("data-loaded-bytes", String(bytes.length));
}
