import { existsSync, mkdirSync, readdirSync, readFileSync } from 'node:fs'
import * as path from 'node:path'
import { FeatureBackend, ViewGeometry } from './backend.js'
import { DiffusionBackend } from './backends/diffusion.js'
import { ProceduralBackend } from './backends/procedural.js'
import { DIFFUSION_CHANNELS, ResolvedConfig } from './config.js'
import { ExtractorError } from './errors.js'
import { readFeatureHeader, writeFeatureMap } from './featureFile.js'
import { writePpm } from './image.js'
import { Manifest, ManifestView, ViewFailure, writeManifest } from './manifest.js'
import { assertConditioning, cameraOf, readPositionMap, readViewInfo } from './viewBundle.js'
import { timestepWindow } from './window.js'

export const WEIGHTS_SPEC = 'linear 0.1..1.0 over final ceil(T/4)..0 steps'

export async function makeBackend(config: ResolvedConfig): Promise<FeatureBackend> {
  if (config.backend === 'procedural') return new ProceduralBackend()
  return DiffusionBackend.load(config.modelDir)
}

function diffusionFile(t: number): string {
  return `diffusion_t${t}.d3ff`
}

/** All files extractView is expected to leave behind for one view. */
function expectedOutputs(viewOutDir: string, config: ResolvedConfig): string[] {
  const files = timestepWindow(config.steps).map((t) => path.join(viewOutDir, diffusionFile(t)))
  files.push(path.join(viewOutDir, 'dino.d3ff'))
  files.push(path.join(viewOutDir, 'textured.ppm'))
  return files
}

/** True when every output exists and every binary passes header validation. */
function outputsComplete(viewOutDir: string, config: ResolvedConfig): boolean {
  for (const file of expectedOutputs(viewOutDir, config)) {
    if (!existsSync(file)) return false
    if (file.endsWith('.d3ff')) {
      try {
        readFeatureHeader(file)
      } catch {
        return false // truncated by an interrupted run; redo the view
      }
    }
  }
  return true
}

export interface ViewResult {
  entry: ManifestView
  skipped: boolean
}

/**
 * Extract one view: run the backend, then write one diffusion feature file
 * per kept timestep, the vision-transformer file, and the textured image,
 * all under outRoot/<view dir name>/. Complete outputs from an earlier run
 * are kept as-is, which makes shape-level extraction resumable.
 */
export async function extractView(
  viewDir: string,
  outRoot: string,
  config: ResolvedConfig,
  backend: FeatureBackend,
): Promise<ViewResult> {
  const info = readViewInfo(viewDir)
  assertConditioning(viewDir, info)
  const viewName = path.basename(viewDir)
  const viewOutDir = path.join(outRoot, viewName)
  const camera = cameraOf(info)

  const diffusion: Record<string, string> = {}
  for (const t of timestepWindow(config.steps)) {
    diffusion[String(t)] = `${viewName}/${diffusionFile(t)}`
  }
  const entry: ManifestView = {
    view_id: info.viewId,
    camera,
    view_dir: viewName,
    diffusion,
    dino: `${viewName}/dino.d3ff`,
  }

  if (outputsComplete(viewOutDir, config)) {
    return { entry, skipped: true }
  }

  const geometry: ViewGeometry = { dir: viewDir, info, positions: readPositionMap(viewDir) }
  const features = await backend.run(geometry, config)
  mkdirSync(viewOutDir, { recursive: true })

  for (const [t, data] of features.diffusion) {
    writeFeatureMap(
      {
        viewId: info.viewId,
        kind: 'diffusion',
        timestep: t,
        height: features.featureHeight,
        width: features.featureWidth,
        channels: DIFFUSION_CHANNELS,
        data,
        camera,
      },
      path.join(viewOutDir, diffusionFile(t)),
    )
  }
  writeFeatureMap(
    {
      viewId: info.viewId,
      kind: 'dino',
      height: features.featureHeight,
      width: features.featureWidth,
      channels: config.vitDim,
      data: features.vit,
      camera,
    },
    path.join(viewOutDir, 'dino.d3ff'),
  )
  writePpm(features.textured, path.join(viewOutDir, 'textured.ppm'))
  return { entry, skipped: false }
}

function shapeIdOf(viewsRoot: string): string {
  const runFile = path.join(viewsRoot, 'run.json')
  if (existsSync(runFile)) {
    try {
      const doc = JSON.parse(readFileSync(runFile, 'ascii'))
      if (typeof doc.shape_id === 'string') return doc.shape_id
    } catch {
      // fall through to the directory name
    }
  }
  return path.basename(path.resolve(viewsRoot))
}

function listViewDirs(viewsRoot: string): string[] {
  const dirs = readdirSync(viewsRoot, { withFileTypes: true })
    .filter((d) => d.isDirectory() && /^view_\d+$/.test(d.name))
    .map((d) => d.name)
    .sort()
  if (dirs.length === 0) {
    throw new ExtractorError(`${viewsRoot}: no view_NNN directories found`)
  }
  return dirs
}

export interface ShapeResult {
  manifestPath: string
  views: number
  skipped: number
  failures: ViewFailure[]
}

/**
 * Extract every view under viewsRoot and write a manifest the distiller
 * consumes. Views whose outputs are already complete are skipped; per-view
 * errors are recorded in the manifest's failures list without aborting the
 * remaining views.
 */
export async function extractShape(
  viewsRoot: string,
  outRoot: string,
  config: ResolvedConfig,
): Promise<ShapeResult> {
  const backend = await makeBackend(config)
  mkdirSync(outRoot, { recursive: true })

  const views: ManifestView[] = []
  const failures: ViewFailure[] = []
  let skipped = 0
  for (const name of listViewDirs(viewsRoot)) {
    const viewDir = path.join(viewsRoot, name)
    try {
      const result = await extractView(viewDir, outRoot, config, backend)
      views.push(result.entry)
      if (result.skipped) skipped++
    } catch (err) {
      if (err instanceof ExtractorError) {
        const viewId = Number((/^view_(\d+)$/.exec(name) ?? [])[1])
        failures.push({ view_id: viewId, message: `${err.name}: ${err.message}` })
      } else {
        throw err
      }
    }
  }

  const manifest: Manifest = {
    shape_id: shapeIdOf(viewsRoot),
    extractor: `d3ff-extractor/${backend.name}`,
    T: config.steps,
    weights_spec: WEIGHTS_SPEC,
    views,
    failures,
  }
  const manifestPath = path.join(outRoot, 'manifest.json')
  writeManifest(manifest, manifestPath)
  return { manifestPath, views: views.length, skipped, failures }
}
