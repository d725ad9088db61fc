export { ExtractorError, ModelLoadFailure, ConditioningMissing, MalformedFeatureFile } from './errors.js'
export {
  DIFFUSION_CHANNELS,
  DEFAULT_VIT_CHANNELS,
  buildPrompt,
  resolveConfig,
} from './config.js'
export type { BackendName, ExtractorConfig, ResolvedConfig } from './config.js'
export {
  FORMAT_VERSION,
  HEADER_BYTES,
  MAGIC,
  readFeatureHeader,
  readFeatureMap,
  sidecarPath,
  writeFeatureMap,
} from './featureFile.js'
export type { FeatureHeader, FeatureKind, FeatureMapFile } from './featureFile.js'
export { timestepWeights, timestepWindow } from './window.js'
export {
  assertConditioning,
  cameraOf,
  conditioningKinds,
  readPositionMap,
  readViewInfo,
} from './viewBundle.js'
export type { PositionMap, ViewInfo } from './viewBundle.js'
export type { FeatureBackend, RgbImage, ViewFeatures, ViewGeometry } from './backend.js'
export { ProceduralBackend } from './backends/procedural.js'
export { DiffusionBackend, REQUIRED_MODEL_FILES } from './backends/diffusion.js'
export { WEIGHTS_SPEC, extractShape, extractView, makeBackend } from './extract.js'
export type { ShapeResult, ViewResult } from './extract.js'
export { writeManifest } from './manifest.js'
export type { Manifest, ManifestView, ViewFailure } from './manifest.js'
