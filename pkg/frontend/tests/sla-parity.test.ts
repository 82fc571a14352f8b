/** Installing through the dashboard configurator and through the CLI with a
 * choice file must produce byte-identical signed agreements. Five choice
 * vectors, each checked on a fresh box pair sharing a seed. */

import { execFileSync } from "node:child_process";
import * as fs from "node:fs";
import * as path from "node:path";
import { fileURLToPath } from "node:url";
import { describe, expect, it } from "vitest";
import { canonicalJson, Json } from "../src/protocol.js";
import { ManifestConfigurator } from "../src/manifest.js";
import type { ListingView } from "../src/manifest.js";
import {
  addSources,
  addSourcesCli,
  cli,
  connectAlice,
  startServer,
  tmpDir,
} from "./helpers.js";

const HOUR = 3_600_000;
const DAY = 24 * HOUR;

interface Vector {
  periods: Record<string, number>;
  report: number;
  preview: boolean;
}

const VECTORS: Vector[] = [
  {
    periods: {
      "energy-meter": 600_000,
      "door-sensor": 600_000,
      presence: 600_000,
      alarm: 600_000,
    },
    report: HOUR,
    preview: true,
  },
  {
    periods: {
      "energy-meter": 60_000,
      "door-sensor": 60_000,
      presence: 60_000,
      alarm: 60_000,
    },
    report: DAY,
    preview: true,
  },
  {
    periods: {
      "energy-meter": 60_000,
      "door-sensor": 600_000,
      presence: 600_000,
      alarm: 600_000,
    },
    report: HOUR,
    preview: false,
  },
  {
    periods: {
      "energy-meter": 600_000,
      "door-sensor": 600_000,
      presence: 600_000,
      alarm: 600_000,
    },
    report: DAY,
    preview: false,
  },
  {
    periods: {
      "energy-meter": 600_000,
      "door-sensor": 60_000,
      presence: 60_000,
      alarm: 600_000,
    },
    report: HOUR,
    preview: true,
  },
];

const APP = "occupancy-demo";
const USER = "user-1-alice";

const STORE_FOR_KIND: Record<string, string> = {
  "energy-meter": "store-energy-1",
  "door-sensor": "store-door-1",
  presence: "store-presence-1",
  alarm: "store-alarm-1",
};

function demoPackage(): Record<string, Json> {
  const json = execFileSync(
    process.env.PYTHON ?? "python3",
    [
      "-c",
      "import json; from databox.scenario import demo_package; " +
        `print(json.dumps(demo_package('${APP}')))`,
    ],
    {
      cwd: path.resolve(
        path.dirname(fileURLToPath(import.meta.url)),
        "..",
        "..",
      ),
      encoding: "utf8",
    },
  );
  return JSON.parse(json);
}

async function dashboardReceipt(vector: Vector, seed: number): Promise<string> {
  const server = await startServer(tmpDir("dbx-ui-"), seed);
  try {
    const { client, session } = await connectAlice(server);
    await addSources(session);
    await session.request("POST", "/apps/publish", { package: demoPackage() });
    const listing = (await session.request(
      "GET",
      `/apps/${APP}`,
    )) as unknown as ListingView;
    const stores = (await session.request("GET", "/stores")).stores as Array<{
      store_id: string;
      kind: string;
    }>;
    const cfg = new ManifestConfigurator(listing.manifest, stores);
    for (const [kind, period] of Object.entries(vector.periods)) {
      cfg.setSamplePeriod(kind, period);
    }
    cfg.setReportPeriod(vector.report);
    cfg.setPreview(vector.preview);
    const sla = await cfg.install(session);
    const receipt = await session.request(
      "GET",
      `/slas/${sla.sla_id}/receipt`,
    );
    client.close();
    return canonicalJson(receipt);
  } finally {
    server.stop();
  }
}

function cliReceipt(vector: Vector, seed: number): string {
  const dataDir = tmpDir("dbx-cli-");
  cli(dataDir, seed, ["account", "--name", "Alice", "--role", "owner"]);
  addSourcesCli(dataDir, seed);
  cli(dataDir, seed, ["publish", "--demo", APP, "--user", USER]);
  const choices = {
    sources: Object.fromEntries(
      Object.entries(vector.periods).map(([kind, period]) => [
        kind,
        {
          selected: true,
          store_id: STORE_FOR_KIND[kind],
          sample_period_ms: period,
        },
      ]),
    ),
    report_period_ms: vector.report,
    preview: vector.preview,
  };
  const choicesFile = path.join(dataDir, "choices.json");
  fs.writeFileSync(choicesFile, JSON.stringify(choices));
  const installed = JSON.parse(
    cli(dataDir, seed, [
      "--json",
      "install",
      APP,
      "--choices",
      choicesFile,
      "--user",
      USER,
    ]),
  );
  const slaId = installed.sla.sla_id as string;
  return cli(dataDir, seed, [
    "receipt",
    slaId,
    "--user",
    USER,
    "--canonical",
  ]).trim();
}

describe("agreement parity between dashboard and CLI installs", () => {
  for (const [i, vector] of VECTORS.entries()) {
    it(`vector ${i + 1} yields byte-identical signed agreements`, async () => {
      const seed = 100 + i;
      const fromUi = await dashboardReceipt(vector, seed);
      const fromCli = cliReceipt(vector, seed);
      expect(fromUi).toBe(fromCli);
      expect(fromUi).toContain('"signature"');
    });
  }
});
