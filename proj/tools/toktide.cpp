// Copyright 2026 The toktide Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// toktide: command-line runner for corpus generation, encoder pretraining,
// tokenizer training, tokenization, captioner training, captioning,
// evaluation, the system comparison and the layer x K sweep.

#include <chrono>
#include <cstdio>
#include <iostream>
#include <map>

#include <CLI11.hpp>

#include "toktide/hash.hpp"
#include "toktide/pipeline/experiment.hpp"

namespace fs = std::filesystem;
using namespace toktide;
using namespace toktide::pipeline;

namespace {

enum ExitCode { kOk = 0, kOther = 1, kConfig = 2, kData = 3, kNumerical = 4 };

void log_line(const std::string& s) { std::cerr << "[toktide] " << s << std::endl; }

// Output directory written under "<out>.partial" and renamed into place only
// once complete, so an interrupted run never leaves an unmarked artifact.
class StagedDir {
 public:
  StagedDir(fs::path out, bool force) : out_(std::move(out)), stage_(out_.string() + ".partial") {
    if (fs::exists(out_) && !force) throw ConfigError(out_.string() + " already exists (use --force to replace it)");
    fs::remove_all(stage_);
    fs::create_directories(stage_);
  }
  const fs::path& path() const { return stage_; }
  void commit() {
    fs::remove_all(out_);
    fs::rename(stage_, out_);
  }

 private:
  fs::path out_, stage_;
};

class Timer {
 public:
  double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count(); }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

// run.json: hashes of the configuration and of the input files, the metric
// results and the wall time.
void write_run_record(const fs::path& dir, const std::string& command, const nlohmann::ordered_json& config,
                      const std::vector<fs::path>& inputs, const nlohmann::ordered_json& metrics, const Timer& timer) {
  nlohmann::ordered_json r;
  r["command"] = command;
  r["config_hash"] = hash::sha256(config.dump());
  r["input_hash"] = inputs.empty() ? "" : hash::tree_hash(inputs);
  r["metrics"] = metrics;
  r["seconds"] = timer.seconds();
  write_json(dir / "run.json", r);
}

ExperimentConfig read_config(const std::string& path) {
  if (!fs::exists(path)) throw ConfigError("config file " + path + " does not exist");
  return load_experiment_config(path);
}

void require_dir(const std::string& path, const std::string& what) {
  if (path.empty()) throw ConfigError(what + " is required");
  if (!fs::is_directory(path)) throw ConfigError(what + " " + path + " does not exist");
}

std::string captions_jsonl(const std::vector<caption::CaptionOutput>& outs) {
  std::string s;
  for (const auto& o : outs) {
    nlohmann::ordered_json j;
    j["id"] = o.clip_id;
    j["caption"] = o.caption;
    j["log_prob"] = o.log_prob;
    s += j.dump() + "\n";
  }
  return s;
}

// Captions keyed by clip id from either a manifest ("captions" array) or a
// caption file ("caption" string), in file order.
std::vector<std::pair<std::string, std::vector<std::string>>> read_caption_file(const fs::path& p) {
  std::vector<std::pair<std::string, std::vector<std::string>>> out;
  std::istringstream in(io::read_text(p));
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      std::vector<std::string> caps;
      if (j.contains("captions"))
        caps = j["captions"].get<std::vector<std::string>>();
      else
        caps.push_back(j.at("caption").get<std::string>());
      out.emplace_back(j.at("id").get<std::string>(), std::move(caps));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(p.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

// Captioner input sequences for a set of clips.
std::vector<Mat<float>> build_inputs(const InputSource& src, const std::vector<synth::Clip>& clips) {
  std::vector<Mat<float>> xs(clips.size());
  if (!src.tokenizer.empty()) {
    const auto tok = load_tokenizer(src.tokenizer);
    parallel_for(clips.size(), [&](std::size_t i) { xs[i] = tok.detokenize(tok.tokenize_frames(clips[i].frames)); });
  } else if (src.layer > 0) {
    if (src.encoder.empty()) throw ConfigError("continuous input at layer " + std::to_string(src.layer) + " needs --encoder");
    const auto tagger = load_tagger(src.encoder);
    parallel_for(clips.size(), [&](std::size_t i) { xs[i] = tagger.encoder.encode(clips[i].frames, src.layer); });
  } else {
    for (std::size_t i = 0; i < clips.size(); ++i) xs[i] = clips[i].frames;
  }
  return xs;
}

std::vector<caption::CaptionExample<float>> examples(const std::vector<synth::Clip>& clips, std::vector<Mat<float>> xs) {
  std::vector<caption::CaptionExample<float>> out;
  for (std::size_t i = 0; i < clips.size(); ++i) out.push_back({clips[i].id, std::move(xs[i]), clips[i].captions});
  return out;
}

std::string system_name(const InputSource& src) {
  if (!src.tokenizer.empty()) {
    const auto info = tokenizer_info(src.tokenizer);
    return info.value("kind", std::string("tokens")) + "-K" + std::to_string(info.value("K", 0L)) + "-L" +
           std::to_string(info.value("layer", 0)) + "-n" + std::to_string(info.value("n_layers", 1));
  }
  return src.layer == 0 ? "fbank" : "continuous-L" + std::to_string(src.layer);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"toktide: audio tokenizers for captioning on synthetic data"};
  app.require_subcommand(1);
  std::string config, out, data, encoder, tokenizer, manifest, captioner, references, kind, name, split = "test";
  std::vector<std::string> candidates;
  std::vector<int> layers;
  std::vector<long> clusters;
  int layer = -1, n_layers = -1, split_layer = -1, beam = -1;
  long K = -1;
  bool force = false;

  auto* gen = app.add_subcommand("gen-data", "generate the in-domain and out-of-domain synthetic corpora");
  gen->add_option("--config", config, "experiment config (JSON)")->required();
  gen->add_option("--out", out, "output data directory")->required();
  gen->add_flag("--force", force, "replace an existing output directory");

  auto* pre = app.add_subcommand("pretrain-encoder", "tag-supervised training of the frozen encoder on the out-of-domain corpus");
  pre->add_option("--config", config)->required();
  pre->add_option("--data", data, "data directory from gen-data")->required();
  pre->add_option("--out", out, "encoder artifact directory")->required();
  pre->add_flag("--force", force);

  auto* ttok = app.add_subcommand("train-tokenizer", "train a tokenizer on the out-of-domain corpus");
  ttok->add_option("--config", config)->required();
  ttok->add_option("--data", data)->required();
  ttok->add_option("--encoder", encoder, "encoder artifact (not needed for acoustic-proxy)");
  ttok->add_option("--kind", kind, "kmeans | repcodec | suptok | acoustic-proxy");
  ttok->add_option("--layer", layer, "feature layer for kmeans / repcodec");
  ttok->add_option("--K", K, "codebook size");
  ttok->add_option("--n-layers", n_layers, "quantizer stages (1 or 2; kmeans ignores it)");
  ttok->add_option("--split", split_layer, "Encoder1 depth for suptok");
  ttok->add_option("--out", out, "tokenizer artifact directory")->required();
  ttok->add_flag("--force", force);

  auto* tokz = app.add_subcommand("tokenize", "write one ATOK token file per clip of a manifest");
  tokz->add_option("--tokenizer", tokenizer)->required();
  tokz->add_option("--manifest", manifest)->required();
  tokz->add_option("--out", out)->required();
  tokz->add_flag("--force", force);

  auto* tcap = app.add_subcommand("train-captioner", "train a captioner on the in-domain corpus");
  tcap->add_option("--config", config)->required();
  tcap->add_option("--data", data)->required();
  tcap->add_option("--tokenizer", tokenizer, "read detokenized tokens from this tokenizer");
  tcap->add_option("--encoder", encoder, "encoder artifact for continuous input");
  tcap->add_option("--layer", layer, "continuous feature layer (0 = raw frames)");
  tcap->add_option("--name", name, "system name recorded with the model");
  tcap->add_option("--out", out)->required();
  tcap->add_flag("--force", force);

  auto* cap = app.add_subcommand("caption", "caption a split with a trained captioner");
  cap->add_option("--captioner", captioner)->required();
  cap->add_option("--data", data)->required();
  cap->add_option("--split", split, "train | val | test");
  cap->add_option("--beam", beam, "beam size (default: 3)");
  cap->add_option("--out", out, "captions JSONL")->required();

  auto* eval = app.add_subcommand("evaluate", "score caption files against references");
  eval->add_option("--candidates", candidates, "caption JSONL files, one system each")->required();
  eval->add_option("--references", references, "manifest or caption JSONL with references")->required();
  eval->add_option("--out", out, "report CSV")->required();

  auto* cmp = app.add_subcommand("compare", "train and score every system of the comparison report");
  cmp->add_option("--config", config)->required();
  cmp->add_option("--data", data)->required();
  cmp->add_option("--encoder", encoder)->required();
  cmp->add_option("--out", out)->required();
  cmp->add_flag("--force", force);

  auto* sweep = app.add_subcommand("sweep", "k-means tokenizer + captioner over a layer x K grid");
  sweep->add_option("--config", config)->required();
  sweep->add_option("--data", data)->required();
  sweep->add_option("--encoder", encoder)->required();
  sweep->add_option("--layers", layers)->delimiter(',')->required();
  sweep->add_option("--clusters", clusters)->delimiter(',')->required();
  sweep->add_option("--out", out)->required();
  sweep->add_flag("--force", force);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    const Timer timer;
    if (*gen) {
      const auto cfg = read_config(config);
      StagedDir dir(out, force);
      const auto corpora = make_corpora(cfg);
      synth::write_corpus(corpora.id, dir.path() / "id");
      synth::write_corpus(corpora.od, dir.path() / "od");
      write_json(dir.path() / "config.json", to_json(cfg));
      nlohmann::ordered_json m;
      for (const auto* c : {&corpora.id, &corpora.od}) {
        const std::string key = c == &corpora.id ? "id" : "od";
        m[key]["classes"] = c->config.num_classes;
        for (const auto& [s, clips] : c->splits) m[key][s] = clips.size();
      }
      write_run_record(dir.path(), "gen-data", to_json(cfg), {}, m, timer);
      dir.commit();
      std::cout << m.dump() << "\n";
    } else if (*pre) {
      const auto cfg = read_config(config);
      require_dir(data, "--data");
      const auto corpora = load_corpora(data);
      StagedDir dir(out, force);
      const auto tagger = pretrain_encoder(cfg, corpora.od, log_line);
      save_tagger(dir.path(), tagger);
      write_run_record(dir.path(), "pretrain-encoder", to_json(cfg), {fs::path(data) / "od"},
                       {{"epochs", tagger.val_f1_history.size()}, {"val_macro_f1", tagger.val_f1_history.back()}}, timer);
      dir.commit();
    } else if (*ttok) {
      auto cfg = read_config(config);
      auto& spec = cfg.tokenizer;
      if (!kind.empty()) spec.kind = tokenizer_kind_from(kind);
      if (!spec.kind) throw ConfigError("train-tokenizer needs a tokenizer kind");
      if (layer >= 0) spec.layer = layer;
      if (K >= 0) spec.K = K;
      if (n_layers >= 0) spec.n_layers = n_layers;
      if (split_layer >= 0) spec.split = split_layer;
      if (*spec.kind == TokenizerKind::kKMeans) spec.n_layers = 1;
      validate(cfg);
      require_dir(data, "--data");
      const auto corpora = load_corpora(data);
      TaggingModel<float> tagger;
      if (*spec.kind != TokenizerKind::kAcousticProxy) {
        require_dir(encoder, "--encoder");
        tagger = load_tagger(encoder);
      } else {
        synth::EncoderConfig ec = cfg.encoder;
        ec.layers = 1;
        tagger.encoder = synth::FrozenEncoder<float>(ec, corpora.od.config.feature_dim);
      }
      if (*spec.kind == TokenizerKind::kSupTok)
        for (const auto& c : corpora.od.split("train"))
          if (c.tags.empty())
            throw DataError("suptok needs tagged clips; " + c.id + " has no tags");
      StagedDir dir(out, force);
      const auto odf = extract_features(tagger.encoder, corpora.od, {feature_layer(spec)});
      const auto t = train_tokenizer(spec, cfg, tagger, corpora.od, odf, log_line);
      save_tokenizer(dir.path(), t.pipeline, t.info);
      write_json(dir.path() / "train_log.json", t.log);
      std::vector<fs::path> inputs{fs::path(data) / "od"};
      if (!encoder.empty()) inputs.push_back(encoder);
      write_run_record(dir.path(), "train-tokenizer", to_json(cfg), inputs, t.info, timer);
      dir.commit();
    } else if (*tokz) {
      require_dir(tokenizer, "--tokenizer");
      if (!fs::exists(manifest)) throw ConfigError("manifest " + manifest + " does not exist");
      const auto tok = load_tokenizer(tokenizer);
      const auto clips = synth::load_clips(manifest);
      StagedDir dir(out, force);
      std::vector<quant::TokenSequence> seqs(clips.size());
      parallel_for(clips.size(), [&](std::size_t i) { seqs[i] = tok.tokenize_frames(clips[i].frames); });
      std::string index;
      std::vector<std::uint32_t> first;
      for (std::size_t i = 0; i < clips.size(); ++i) {
        quant::write_tokens(dir.path() / (clips[i].id + ".atok"), seqs[i]);
        nlohmann::ordered_json j;
        j["id"] = clips[i].id;
        j["path"] = clips[i].id + ".atok";
        j["frames"] = seqs[i].frames();
        j["layers"] = seqs[i].layers();
        index += j.dump() + "\n";
        first.insert(first.end(), seqs[i].indices[0].begin(), seqs[i].indices[0].end());
      }
      io::write_text_atomic(dir.path() / "index.jsonl", index);
      const auto st = quant::codebook_stats(first, seqs.empty() ? 1u : seqs[0].codebook_sizes[0]);
      const nlohmann::ordered_json m{{"clips", clips.size()}, {"utilization", st.utilization}, {"perplexity", st.perplexity}};
      write_run_record(dir.path(), "tokenize", {{"tokenizer", tokenizer}, {"manifest", manifest}},
                       {fs::path(tokenizer), fs::path(manifest)}, m, timer);
      dir.commit();
      std::cout << m.dump() << "\n";
    } else if (*tcap) {
      const auto cfg = read_config(config);
      require_dir(data, "--data");
      InputSource src;
      if (!tokenizer.empty()) {
        require_dir(tokenizer, "--tokenizer");
        src.tokenizer = fs::absolute(tokenizer).string();
      } else {
        src.layer = layer >= 0 ? layer : cfg.tokenizer.layer;
        if (src.layer > 0) {
          require_dir(encoder, "--encoder");
          src.encoder = fs::absolute(encoder).string();
        }
      }
      const auto id = load_corpus(fs::path(data) / "id");
      CaptionData d;
      d.train = examples(id.split("train"), build_inputs(src, id.split("train")));
      d.val = examples(id.split("val"), build_inputs(src, id.split("val")));
      StagedDir dir(out, force);
      caption::TrainHistory h;
      auto b = train_captioner_bundle(cfg, caption_vocab(id), d, &h, log_line);
      b.input = src;
      b.system = name.empty() ? system_name(src) : name;
      nlohmann::ordered_json info{{"train_loss", h.train_loss}, {"val_loss", h.val_loss}, {"first_batch_loss", h.first_batch_loss}};
      save_captioner(dir.path(), b, info);
      std::vector<fs::path> inputs{fs::path(data) / "id"};
      if (!src.tokenizer.empty()) inputs.push_back(src.tokenizer);
      if (!src.encoder.empty()) inputs.push_back(src.encoder);
      write_run_record(dir.path(), "train-captioner", to_json(cfg), inputs,
                       {{"final_train_loss", h.train_loss.back()}, {"final_val_loss", h.val_loss.back()}}, timer);
      dir.commit();
    } else if (*cap) {
      require_dir(captioner, "--captioner");
      require_dir(data, "--data");
      if (beam == -1) beam = 3;
      if (beam < 1) throw ConfigError("--beam must be >= 1");
      auto b = load_captioner(captioner);
      const auto clips = synth::load_clips(fs::path(data) / "id" / (split + ".jsonl"));
      const auto outs = caption::generate_captions<float>(*b.model, b.vocab, examples(clips, build_inputs(b.input, clips)), beam);
      io::write_text_atomic(out, captions_jsonl(outs));
      log_line(b.system + ": captioned " + std::to_string(outs.size()) + " clips");
    } else if (*eval) {
      if (!fs::exists(references)) throw ConfigError("references " + references + " do not exist");
      const auto refs = read_caption_file(references);
      std::map<std::string, const std::vector<std::string>*> by_id;
      for (const auto& [id, caps] : refs) by_id[id] = &caps;
      std::ostringstream csv;
      csv << "system,cider_d,n_words\n";
      for (const auto& c : candidates) {
        if (!fs::exists(c)) throw ConfigError("candidate file " + c + " does not exist");
        std::vector<std::string> cands;
        std::vector<std::vector<std::string>> rs;
        for (const auto& [id, caps] : read_caption_file(c)) {
          auto it = by_id.find(id);
          if (it == by_id.end()) throw DataError("no references for clip " + id + " (from " + c + ")");
          cands.push_back(caps.front());
          rs.push_back(*it->second);
        }
        const double score = metrics::cider_d(cands, rs).corpus;
        csv << fs::path(c).stem().string() << ',' << fmt(score) << ','
            << metrics::unique_words(cands) << '\n';
      }
      io::write_text_atomic(out, csv.str());
      std::cout << csv.str();
    } else if (*cmp) {
      const auto cfg = read_config(config);
      require_dir(data, "--data");
      require_dir(encoder, "--encoder");
      const auto corpora = load_corpora(data);
      const auto tagger = load_tagger(encoder);
      StagedDir dir(out, force);
      const auto rows = run_systems(cfg, tagger, corpora, default_systems(cfg), log_line);
      const std::string csv = comparison_csv(rows);
      io::write_text_atomic(dir.path() / "report.csv", csv);
      for (const auto& r : rows)
        if (!r.captions.empty()) io::write_text_atomic(dir.path() / "captions" / (r.plan.name + ".jsonl"), captions_jsonl(r.captions));
      nlohmann::ordered_json m = nlohmann::ordered_json::object();
      for (const auto& r : rows) m[r.plan.name] = {{"cider_d", r.cider_d}, {"probe_f1", r.probe_f1}};
      write_run_record(dir.path(), "compare", to_json(cfg), {fs::path(data), fs::path(encoder)}, m, timer);
      dir.commit();
      std::cout << csv;
    } else if (*sweep) {
      const auto cfg = read_config(config);
      if (layers.empty() || clusters.empty()) throw ConfigError("sweep grid is empty");
      require_dir(data, "--data");
      require_dir(encoder, "--encoder");
      const auto corpora = load_corpora(data);
      const auto tagger = load_tagger(encoder);
      StagedDir dir(out, force);
      const auto cells = run_sweep(cfg, tagger, corpora, layers, clusters, thread_count(), log_line);
      io::write_text_atomic(dir.path() / "sweep.csv", sweep_csv(cells));
      io::write_text_atomic(dir.path() / "sweep.svg", sweep_svg(cells));
      auto cfg_json = to_json(cfg);
      cfg_json["layers"] = layers;
      cfg_json["clusters"] = clusters;
      write_run_record(dir.path(), "sweep", cfg_json, {fs::path(data), fs::path(encoder)}, {{"cells", cells.size()}}, timer);
      dir.commit();
      std::cout << sweep_csv(cells);
    }
    return kOk;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kNumerical;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const ShapeError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kOther;
  }
}
