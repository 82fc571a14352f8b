export { GatewayClient, Session } from "./client.js";
export {
  canonicalJson,
  GatewayError,
  PROTOCOL_VERSION,
} from "./protocol.js";
export type {
  ExportItemView,
  Json,
  NotificationView,
  PushEvent,
  Request,
  Response,
} from "./protocol.js";
export {
  DISCLOSURE_FIELDS,
  listingCard,
  ManifestConfigurator,
} from "./manifest.js";
export type { ListingView, ManifestDoc, SourceOffer } from "./manifest.js";
export { ExportQueue, NotificationFeed } from "./exports.js";
export { inspectRun, listRuns } from "./provenance.js";
export type { FlowPathStep, TraceEntryView } from "./provenance.js";
export { PanicControls } from "./panic.js";
export type { Confirm } from "./panic.js";
