/** Consent configurator: renders the three-layer notice and turns the
 * user's picks into the choice vector submitted at install time.
 *
 * Every control is constrained to the lists the manifest offers; an
 * out-of-list value is unrepresentable, so the server never sees one.
 */

import { Json } from "./protocol.js";
import { Session } from "./client.js";

export interface SourceOffer {
  kind: string;
  optional: boolean;
  actions: string[];
  sample_periods_ms: number[];
}

export interface ManifestDoc {
  app_id: string;
  short: {
    purpose: string;
    risk_summary: string;
    off_box: boolean;
    sources: SourceOffer[];
    report_periods_ms?: number[];
    [key: string]: Json | SourceOffer[] | undefined;
  };
  condensed: Record<string, Json>;
  legal: { terms: string };
}

export interface ListingView {
  app_id: string;
  manifest: ManifestDoc;
  risk: {
    overall: number;
    overall_label: string;
    shields: number;
    factors: Record<string, { level: number; label: string; reasons: string[] }>;
  };
  accredited: boolean;
  verified: boolean;
  stars: { mean: number | null; count: number };
}

/** The transparency fields of the condensed layer, in display order. */
export const DISCLOSURE_FIELDS = [
  "controller",
  "purposes",
  "legal_basis",
  "retention",
  "rights",
  "withdrawal",
] as const;

/** At-a-glance card: purpose, shields, stars, and the layered notice. */
export function listingCard(listing: ListingView) {
  return {
    appId: listing.app_id,
    purpose: listing.manifest.short.purpose,
    riskSummary: listing.manifest.short.risk_summary,
    shields: listing.risk.shields,
    riskLabel: listing.risk.overall_label,
    accredited: listing.accredited,
    stars: listing.stars,
    disclosures: DISCLOSURE_FIELDS.map((field) => ({
      field,
      text: String(listing.manifest.condensed[field] ?? ""),
    })),
    legalTerms: listing.manifest.legal.terms,
  };
}

interface SourceChoice {
  selected: boolean;
  store_id: string | null;
  sample_period_ms: number;
}

export class ManifestConfigurator {
  private choices = new Map<string, SourceChoice>();
  private reportPeriod: number | null = null;
  private preview: boolean;

  constructor(
    readonly manifest: ManifestDoc,
    readonly stores: Array<{ store_id: string; kind: string }>,
  ) {
    // default: everything offered is selected at its slowest period,
    // mapped to the first store of its kind; preview on for off-box apps
    for (const offer of manifest.short.sources) {
      const store = stores.find((s) => s.kind === offer.kind);
      this.choices.set(offer.kind, {
        selected: store !== undefined,
        store_id: store?.store_id ?? null,
        sample_period_ms: Math.max(...offer.sample_periods_ms),
      });
    }
    if (manifest.short.off_box) {
      this.reportPeriod = Math.min(...(manifest.short.report_periods_ms ?? []));
    }
    this.preview = manifest.short.off_box;
  }

  private offer(kind: string): SourceOffer {
    const offer = this.manifest.short.sources.find((s) => s.kind === kind);
    if (!offer) throw new Error(`manifest offers no source of kind ${kind}`);
    return offer;
  }

  /** Toggle a source; mandatory sources cannot be deselected in the UI. */
  setSelected(kind: string, selected: boolean): void {
    const offer = this.offer(kind);
    if (!selected && !offer.optional) {
      throw new Error(`source ${kind} is mandatory`);
    }
    this.choices.get(kind)!.selected = selected;
  }

  /** Pick a sampling period from the offered list only. */
  setSamplePeriod(kind: string, periodMs: number): void {
    const offer = this.offer(kind);
    if (!offer.sample_periods_ms.includes(periodMs)) {
      throw new Error(
        `period ${periodMs} not offered for ${kind}; ` +
          `offered: ${offer.sample_periods_ms.join(", ")}`,
      );
    }
    this.choices.get(kind)!.sample_period_ms = periodMs;
  }

  setStore(kind: string, storeId: string): void {
    this.offer(kind);
    const store = this.stores.find(
      (s) => s.store_id === storeId && s.kind === kind,
    );
    if (!store) throw new Error(`no ${kind} store with id ${storeId}`);
    this.choices.get(kind)!.store_id = storeId;
  }

  /** Pick a reporting period from the offered list only. */
  setReportPeriod(periodMs: number): void {
    const offered = this.manifest.short.report_periods_ms ?? [];
    if (!offered.includes(periodMs)) {
      throw new Error(`report period ${periodMs} not offered`);
    }
    this.reportPeriod = periodMs;
  }

  setPreview(preview: boolean): void {
    this.preview = preview;
  }

  /** The vector submitted to the install route. Deselected sources are
   * simply absent: no grant is requested for them. */
  choiceVector(): Record<string, Json> {
    const sources: Record<string, Json> = {};
    for (const [kind, choice] of this.choices) {
      if (!choice.selected) continue;
      if (choice.store_id === null) {
        throw new Error(`no store chosen for ${kind}`);
      }
      sources[kind] = {
        selected: true,
        store_id: choice.store_id,
        sample_period_ms: choice.sample_period_ms,
      };
    }
    const vector: Record<string, Json> = { sources, preview: this.preview };
    if (this.manifest.short.off_box) {
      vector.report_period_ms = this.reportPeriod;
    }
    return vector;
  }

  /** Submit the configured choices; returns the agreement the server made. */
  async install(session: Session): Promise<Record<string, Json>> {
    const body = await session.request(
      "POST",
      `/apps/${this.manifest.app_id}/install`,
      { choices: this.choiceVector() },
    );
    return body.sla as Record<string, Json>;
  }
}
