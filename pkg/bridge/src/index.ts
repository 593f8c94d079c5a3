export { Bridge, BridgeError, BridgeSession, type BridgeOptions } from "./client.js";
export {
  packTensor,
  unpackTensor,
  type ArrayPayload,
  type BridgeStats,
  type Decision,
  type F64Tensor,
  type SlotUpdate,
  type TrackStatus,
} from "./protocol.js";
