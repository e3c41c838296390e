#!/usr/bin/env node
import * as fs from 'fs'
import * as tf from '@tensorflow/tfjs'
import { encodeDstf } from './dstf'
import { loadPng, resizeLongSide } from './image'
import { FeatureNet, STAGE_NAMES } from './net'

export interface ExportSpec {
  imagePath: string
  layers: string[]
  longSide: number | null
  outPath: string
  weightsPath: string | null
  seed: number
}

const USAGE = `usage: dstf-export --image PATH --layers L1,L2,... --long-side N --out PATH

options:
  --image PATH       input PNG image (8-bit RGB/RGBA)
  --layers LIST      comma-separated stage names, shallow to deep
                     (available: ${STAGE_NAMES.join(', ')})
  --long-side N      resize so the longer image side equals N (optional)
  --out PATH         output DSTF file
  --weights PATH     JSON file with per-layer conv kernels (optional)
  --seed N           seed for the built-in deterministic kernels (default 1234)
`

export function parseArgs(argv: string[]): ExportSpec {
  const spec: ExportSpec = {
    imagePath: '',
    layers: STAGE_NAMES.slice(),
    longSide: null,
    outPath: '',
    weightsPath: null,
    seed: 1234,
  }
  for (let i = 0; i < argv.length; i++) {
    const arg = argv[i]
    const next = () => {
      if (i + 1 >= argv.length) throw new Error(`missing value for ${arg}`)
      return argv[++i]
    }
    switch (arg) {
      case '--image':
        spec.imagePath = next()
        break
      case '--layers':
        spec.layers = next().split(',').map(s => s.trim()).filter(Boolean)
        break
      case '--long-side':
        spec.longSide = parseInt(next(), 10)
        break
      case '--out':
        spec.outPath = next()
        break
      case '--weights':
        spec.weightsPath = next()
        break
      case '--seed':
        spec.seed = parseInt(next(), 10)
        break
      case '--help':
      case '-h':
        process.stdout.write(USAGE)
        process.exit(0)
        break
      default:
        throw new Error(`unknown argument ${arg}\n${USAGE}`)
    }
  }
  if (!spec.imagePath || !spec.outPath) {
    throw new Error(`--image and --out are required\n${USAGE}`)
  }
  if (spec.layers.length === 0) {
    throw new Error('at least one layer must be requested')
  }
  if (spec.longSide !== null && (!Number.isFinite(spec.longSide) || spec.longSide < 8)) {
    throw new Error(`--long-side must be an integer >= 8`)
  }
  return spec
}

export async function runExport(spec: ExportSpec): Promise<void> {
  await tf.ready()
  const weights = spec.weightsPath
    ? (JSON.parse(fs.readFileSync(spec.weightsPath, 'utf-8')) as Record<string, number[]>)
    : undefined
  const net = new FeatureNet({ seed: spec.seed, weights })
  net.validateLayers(spec.layers)

  let img = loadPng(spec.imagePath)
  if (spec.longSide !== null) {
    img = resizeLongSide(img, spec.longSide)
  }
  const levels = net.extract(img, spec.layers)
  for (const level of levels) {
    for (const v of level.data) {
      if (!Number.isFinite(v)) {
        throw new Error('non-finite activation value; refusing to write')
      }
    }
  }
  fs.writeFileSync(spec.outPath, encodeDstf(levels))
}

export async function main(argv: string[]): Promise<number> {
  try {
    const spec = parseArgs(argv)
    await runExport(spec)
    return 0
  } catch (err) {
    process.stderr.write(`error: ${err instanceof Error ? err.message : err}\n`)
    return 1
  }
}

if (require.main === module) {
  main(process.argv.slice(2)).then(code => {
    process.exitCode = code
  })
}
