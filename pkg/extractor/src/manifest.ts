import { writeFileSync } from 'node:fs'

/** One view's entry; paths are relative to the manifest's directory. */
export interface ManifestView {
  view_id: number
  camera: Record<string, number>
  view_dir: string | null
  /** Timestep (as a string key) -> diffusion feature file. */
  diffusion: Record<string, string>
  dino: string | null
}

export interface ViewFailure {
  view_id: number
  message: string
}

export interface Manifest {
  shape_id: string
  extractor: string
  T: number
  weights_spec: string
  views: ManifestView[]
  /** Extra diagnostics; consumers that only know the views list ignore it. */
  failures: ViewFailure[]
}

export function writeManifest(manifest: Manifest, file: string): void {
  // stable key order for byte-identical reruns
  const doc = {
    T: manifest.T,
    extractor: manifest.extractor,
    failures: manifest.failures,
    shape_id: manifest.shape_id,
    views: manifest.views.map((v) => ({
      camera: v.camera,
      diffusion: v.diffusion,
      dino: v.dino,
      view_dir: v.view_dir,
      view_id: v.view_id,
    })),
    weights_spec: manifest.weights_spec,
  }
  writeFileSync(file, JSON.stringify(doc, null, 2) + '\n')
}
