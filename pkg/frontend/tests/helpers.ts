/** Spawns the platform's socket server and CLI for end-to-end tests. */

import { execFileSync, spawn, ChildProcess } from "node:child_process";
import * as fs from "node:fs";
import * as os from "node:os";
import * as path from "node:path";
import { fileURLToPath } from "node:url";
import { GatewayClient, Session } from "../src/client.js";

const HERE = path.dirname(fileURLToPath(import.meta.url));
const REPO_ROOT = path.resolve(HERE, "..", "..");
const PYTHON = process.env.PYTHON ?? "python3";

export interface Server {
  port: number;
  proc: ChildProcess;
  dataDir: string;
  stop(): void;
}

export function tmpDir(prefix: string): string {
  return fs.mkdtempSync(path.join(os.tmpdir(), prefix));
}

/** Starts `databox.serve` on a free port, with Alice as bootstrap owner. */
export async function startServer(
  dataDir: string,
  seed: number,
): Promise<Server> {
  const proc = spawn(
    PYTHON,
    [
      "-m",
      "databox.serve",
      "--data-dir",
      dataDir,
      "--seed",
      String(seed),
      "--port",
      "0",
      "--bootstrap-owner",
      "Alice",
    ],
    { cwd: REPO_ROOT, stdio: ["ignore", "pipe", "inherit"] },
  );
  const port = await new Promise<number>((resolve, reject) => {
    let banner = "";
    proc.stdout!.setEncoding("utf8");
    proc.stdout!.on("data", (chunk: string) => {
      banner += chunk;
      const m = banner.match(/LISTENING (\d+)/);
      if (m) resolve(Number(m[1]));
    });
    proc.once("exit", (code) =>
      reject(new Error(`server exited early (code ${code})`)),
    );
  });
  return { port, proc, dataDir, stop: () => proc.kill() };
}

export async function connectAlice(
  server: Server,
): Promise<{ client: GatewayClient; session: Session }> {
  const client = await GatewayClient.connect("127.0.0.1", server.port);
  const session = await Session.login(client, "user-1-alice");
  return { client, session };
}

/** Runs one CLI invocation against a data directory; returns stdout. */
export function cli(dataDir: string, seed: number, args: string[]): string {
  return execFileSync(
    PYTHON,
    ["-m", "databox.cli", "--data-dir", dataDir, "--seed", String(seed), ...args],
    { cwd: REPO_ROOT, encoding: "utf8" },
  );
}

export const SOURCES = [
  { kind: "energy-meter", label: "mains", source_id: "energy-1" },
  { kind: "door-sensor", label: "front", source_id: "door-1" },
  { kind: "presence", label: "hall", source_id: "presence-1" },
  { kind: "alarm", label: "panel", source_id: "alarm-1" },
];

/** Registers the standard four home sources over the wire. */
export async function addSources(session: Session): Promise<void> {
  for (const src of SOURCES) {
    await session.request("POST", "/sources", {
      kind: src.kind,
      label: src.label,
      owner_ids: [session.userId],
      source_id: src.source_id,
    });
  }
}

/** Same four sources via the CLI, as the same user. */
export function addSourcesCli(dataDir: string, seed: number): void {
  for (const src of SOURCES) {
    cli(dataDir, seed, [
      "source",
      "--kind",
      src.kind,
      "--label",
      src.label,
      "--owner",
      "user-1-alice",
      "--source-id",
      src.source_id,
      "--user",
      "user-1-alice",
    ]);
  }
}
