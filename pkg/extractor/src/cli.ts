#!/usr/bin/env node
import * as path from 'node:path'
import { pathToFileURL } from 'node:url'
import { parseArgs } from 'node:util'
import { BackendName, resolveConfig } from './config.js'
import { ExtractorError } from './errors.js'
import { extractShape } from './extract.js'

const USAGE = `usage: d3ff-extract --views <dir> --subject <text> [options]

Extract per-view feature maps from a rendered view directory and write a
manifest consumable by the distiller.

options:
  --views <dir>        directory of view_NNN bundles (required)
  --subject <text>     prompt subject, e.g. "human" or "camel" (required)
  --steps <n>          denoising steps T (default 30)
  --seed <n>           generation seed (default 0)
  --out <dir>          output directory (default <views>/features)
  --backend <name>     procedural | diffusion (default procedural)
  --model-dir <dir>    weights directory for the diffusion backend
  --feature-res <n>    spatial size of emitted maps (default 32)
  --help               show this message
`

export async function main(argv: string[]): Promise<number> {
  let parsed
  try {
    parsed = parseArgs({
      args: argv,
      options: {
        views: { type: 'string' },
        subject: { type: 'string' },
        steps: { type: 'string', default: '30' },
        seed: { type: 'string', default: '0' },
        out: { type: 'string' },
        backend: { type: 'string', default: 'procedural' },
        'model-dir': { type: 'string' },
        'feature-res': { type: 'string', default: '32' },
        help: { type: 'boolean', default: false },
      },
    })
  } catch (err) {
    process.stderr.write(`${(err as Error).message}\n${USAGE}`)
    return 2
  }
  const args = parsed.values
  if (args.help) {
    process.stdout.write(USAGE)
    return 0
  }
  if (!args.views || !args.subject) {
    process.stderr.write(`--views and --subject are required\n${USAGE}`)
    return 2
  }
  if (args.backend !== 'procedural' && args.backend !== 'diffusion') {
    process.stderr.write(`unknown backend ${args.backend}\n`)
    return 2
  }

  try {
    const config = resolveConfig({
      promptSubject: args.subject,
      steps: Number(args.steps),
      seed: Number(args.seed),
      featureResolution: Number(args['feature-res']),
      backend: args.backend as BackendName,
      modelDir: args['model-dir'],
    })
    const outRoot = args.out ?? path.join(args.views, 'features')
    const result = await extractShape(args.views, outRoot, config)
    process.stdout.write(
      JSON.stringify({
        manifest: result.manifestPath,
        views: result.views,
        skipped: result.skipped,
        failures: result.failures,
      }) + '\n',
    )
    return result.views > 0 ? 0 : 1
  } catch (err) {
    if (err instanceof ExtractorError || err instanceof RangeError) {
      process.stderr.write(JSON.stringify({ error: err.name, message: err.message }) + '\n')
      return 1
    }
    throw err
  }
}

const invokedDirectly =
  process.argv[1] !== undefined && import.meta.url === pathToFileURL(process.argv[1]).href
if (invokedDirectly) {
  main(process.argv.slice(2)).then((code) => {
    process.exitCode = code
  })
}
