// nlm: chunk documents, encode them into a vector cache, pretrain the
// chunk-level model, and evaluate document embeddings.
//
// Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "nextlevel/nextlevel.hpp"

namespace {

uint64_t env_seed() {
    const char* v = std::getenv("NLM_SEED");
    if (!v || !*v) return 0;
    try {
        return std::stoull(v);
    } catch (const std::exception&) {
        throw nlm::DataError(std::string("NLM_SEED is not an integer: ") + v);
    }
}

nlm::ChunkMode parse_mode(const std::string& s) {
    if (s == "fixed") return nlm::ChunkMode::Fixed;
    if (s == "sentence") return nlm::ChunkMode::Sentence;
    throw nlm::DataError("unknown chunk mode: " + s);
}

void write_run_manifest(const std::string& dir, const std::string& command,
                        const nlohmann::ordered_json& config) {
    nlohmann::ordered_json j;
    j["tool"] = "nlm";
    j["version"] = nlm::kVersion;
    j["command"] = command;
    j["config"] = config;
    std::ofstream out(dir + "/run.json", std::ios::binary);
    if (!out) throw nlm::DataError("cannot write run manifest in " + dir);
    out << j.dump(2) << '\n';
}

struct ChunkArgs {
    std::string corpus;
    std::vector<std::string> plaintext;
    std::string mode = "fixed";
    int chunk_size = 32;
    std::string out;
    int workers = 1;
};

int run_chunk(const ChunkArgs& a) {
    std::vector<nlm::RawDocument> docs;
    if (!a.corpus.empty()) {
        docs = nlm::read_corpus_jsonl(a.corpus);
    }
    for (const auto& path : a.plaintext) docs.push_back(nlm::read_plaintext(path));
    if (docs.empty()) throw nlm::DataError("no input documents (use --corpus or --plaintext)");
    auto chunked = nlm::chunk_corpus(docs, parse_mode(a.mode), a.chunk_size, a.workers);
    if (chunked.empty()) throw nlm::DataError("every document produced zero chunks");
    nlm::write_manifest(a.out, chunked);
    size_t chunks = 0;
    long tokens = 0;
    for (const auto& d : chunked) {
        chunks += d.chunks.size();
        tokens += d.total_tokens;
    }
    std::cout << "documents " << chunked.size() << " chunks " << chunks << " tokens " << tokens << '\n';
    return 0;
}

struct EncodeArgs {
    std::string manifest;
    std::string out;
    int dim = 64;
    uint64_t seed = 0;
    bool no_normalize = false;
    std::string encoder_name = "reference";
    int shard_docs = 1024;
    int workers = 1;
    std::string import_path;
    std::string format = "jsonl";
};

int run_encode(const EncodeArgs& a) {
    auto manifest = nlm::read_manifest(a.manifest);
    nlm::EncoderSpec spec;
    spec.name = a.encoder_name;
    spec.dim = a.dim;
    spec.normalizes = !a.no_normalize;
    spec.validate();
    if (!a.import_path.empty()) {
        nlm::ImportFormat fmt;
        if (a.format == "jsonl") fmt = nlm::ImportFormat::Jsonl;
        else if (a.format == "f32") fmt = nlm::ImportFormat::RawF32;
        else throw nlm::DataError("unknown import format: " + a.format);
        nlm::import_external(a.import_path, fmt, manifest, spec, a.out,
                             static_cast<size_t>(a.shard_docs));
    } else {
        nlm::encode_corpus_reference(manifest, spec, a.seed, a.out, static_cast<size_t>(a.shard_docs),
                                     a.workers);
    }
    auto cache = nlm::EmbeddingCache::open(a.out);
    std::cout << "cache " << a.out << " documents " << cache.doc_count() << " dim " << cache.spec().dim
              << " checksum " << nlm::hex_string(cache.checksum()) << '\n';
    return 0;
}

struct PretrainArgs {
    std::string cache;
    std::string out;
    int seq_len = 512;
    int d_model = 384;
    int n_layers = 6;
    int n_heads = 6;
    int ffn_hidden = 0;
    int head_hidden = 0;
    double dropout = 0.1;
    double loss_beta = 1.0;
    bool post_ln = false;
    int epochs = 20;
    int steps = 0;  // overrides epochs when set
    int batch = 512;
    int micro_batch = 0;
    double lr = 1e-4;
    double warmup_frac = 0.05;
    double weight_decay = 0.01;
    double mask_rate = 0.15;
    double p_mask = 0.8;
    double p_random = 0.1;
    bool simple_masking = false;
    bool loss_on_masked_only = false;
    uint64_t seed = 0;
    bool resume = false;
    int checkpoint_every = 0;
    int metrics_every = 10;
    bool desk = false;
};

int run_pretrain(PretrainArgs a) {
    if (a.desk) {
        a.seq_len = 16;
        a.d_model = 32;
        a.n_layers = 2;
        a.n_heads = 4;
        a.batch = 8;
        if (a.steps == 0) a.steps = 200;
    }
    auto cache = nlm::EmbeddingCache::open(a.cache);

    nlm::ModelParams<float> params;
    nlm::TrainState state;
    if (a.resume) {
        params = nlm::load_model<float>(a.out + "/model.nlmp");
        state = nlm::load_train_state(a.out + "/state.nlmt", params);
        if (state.seed != a.seed) {
            throw nlm::DataError("resume seed mismatch: state has " + std::to_string(state.seed) +
                                 ", requested " + std::to_string(a.seed));
        }
    } else {
        nlm::ModelConfig mc;
        mc.d_in = cache.spec().dim;
        mc.d_model = a.d_model;
        mc.n_layers = a.n_layers;
        mc.n_heads = a.n_heads;
        mc.ffn_hidden = a.ffn_hidden;
        mc.head_hidden = a.head_hidden;
        mc.seq_len = a.seq_len;
        mc.dropout = a.dropout;
        mc.loss_beta = a.loss_beta;
        mc.pre_ln = !a.post_ln;
        mc.finalize();
        params = nlm::init_params<float>(mc, a.seed);
        state = nlm::init_train_state(params, a.seed);
    }

    // On resume the stored model decides the sequence length.
    nlm::TrainData data = nlm::load_train_data(cache, params.config.seq_len);

    nlm::TrainConfig tc;
    tc.seed = a.seed;
    tc.batch_size = a.batch;
    tc.micro_batch = a.micro_batch;
    tc.max_lr = a.lr;
    tc.warmup_frac = a.warmup_frac;
    tc.weight_decay = a.weight_decay;
    tc.masking.rate = a.mask_rate;
    tc.masking.p_mask = a.p_mask;
    tc.masking.p_random = a.p_random;
    tc.masking.simple_mode = a.simple_masking;
    tc.loss_on_masked_only = a.loss_on_masked_only;
    tc.metrics_every = a.metrics_every;
    tc.checkpoint_every = a.checkpoint_every;
    if (a.steps > 0) {
        tc.total_steps = a.steps;
    } else {
        size_t n_seq = data.packed.sequences.size();
        size_t per_epoch = (n_seq + static_cast<size_t>(a.batch) - 1) / static_cast<size_t>(a.batch);
        tc.total_steps = static_cast<int>(per_epoch * static_cast<size_t>(a.epochs));
    }

    std::filesystem::create_directories(a.out);
    nlohmann::ordered_json tcj;
    nlm::to_json(tcj, tc);
    nlohmann::ordered_json mcj;
    nlm::to_json(mcj, params.config);
    write_run_manifest(a.out, "pretrain", {{"train", tcj}, {"model", mcj}, {"cache", a.cache}});

    nlm::TrainResult result = nlm::train(params, state, data, tc, a.out, &std::cout);
    std::cout << "trained " << result.steps_run << " steps, final loss " << result.final_loss
              << " cosine " << result.final_cosine << '\n';
    return 0;
}

struct EmbedArgs {
    std::string cache;
    std::string model;
    std::string pooling = "mean_contextualized";
    std::string out;
};

int run_embed(const EmbedArgs& a) {
    auto cache = nlm::EmbeddingCache::open(a.cache);
    nlm::Embedder emb;
    emb.pooling = nlm::pooling_from_string(a.pooling);
    nlm::ModelParams<float> model;
    if (emb.pooling == nlm::Pooling::MeanContextualized) {
        if (a.model.empty()) throw nlm::DataError("contextualized pooling needs --model");
        model = nlm::load_model<float>(a.model);
        if (model.config.d_in != cache.spec().dim) {
            throw nlm::DataError("model expects input dim " + std::to_string(model.config.d_in) +
                                 ", cache provides " + std::to_string(cache.spec().dim));
        }
        emb.model = &model;
    }
    std::ofstream out(a.out, std::ios::binary);
    if (!out) throw nlm::DataError("cannot write embeddings: " + a.out);
    for (const auto& id : cache.doc_ids()) {
        std::vector<float> e = emb.embed_vectors(cache.read_doc(id));
        nlohmann::ordered_json j;
        j["doc_id"] = id;
        j["embedding"] = e;
        out << j.dump() << '\n';
    }
    std::cout << "embedded " << cache.doc_count() << " documents to " << a.out << '\n';
    return 0;
}

struct EvalCommonArgs {
    std::string cache;
    std::string model;
    std::string task;
    std::string out;
    uint64_t seed = 0;
    uint64_t encoder_seed = 0;
    std::string chunk_mode = "fixed";
    int chunk_size = 32;
};

nlm::TextEncoder make_text_encoder(const nlm::EmbeddingCache& cache, const EvalCommonArgs& a) {
    nlm::TextEncoder enc;
    enc.spec = cache.spec();
    enc.seed = a.encoder_seed;
    enc.mode = parse_mode(a.chunk_mode);
    enc.chunk_size = a.chunk_size;
    return enc;
}

void write_report(const std::string& path, const nlohmann::ordered_json& j) {
    std::cout << j.dump(2) << '\n';
    if (path.empty()) return;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw nlm::DataError("cannot write report: " + path);
    out << j.dump(2) << '\n';
}

struct StsArgs : EvalCommonArgs {
    std::string pooling = "mean_contextualized";
    std::string manifest;  // optional, enables per-length bins
    bool random_init = false;
    int seq_len = 16;
    int d_model = 32;
    int n_layers = 2;
    int n_heads = 4;
};

int run_eval_sts(const StsArgs& a) {
    auto cache = nlm::EmbeddingCache::open(a.cache);
    nlm::Embedder emb;
    emb.pooling = nlm::pooling_from_string(a.pooling);
    emb.encoder = make_text_encoder(cache, a);
    nlm::ModelParams<float> model;
    if (emb.pooling == nlm::Pooling::MeanContextualized) {
        if (a.random_init) {
            nlm::ModelConfig mc;
            mc.d_in = cache.spec().dim;
            mc.d_model = a.d_model;
            mc.n_layers = a.n_layers;
            mc.n_heads = a.n_heads;
            mc.seq_len = a.seq_len;
            mc.finalize();
            model = nlm::init_params<float>(mc, a.seed);
        } else {
            if (a.model.empty()) throw nlm::DataError("contextualized pooling needs --model or --random-init");
            model = nlm::load_model<float>(a.model);
        }
        if (model.config.d_in != cache.spec().dim) {
            throw nlm::DataError("model expects input dim " + std::to_string(model.config.d_in) +
                                 ", cache provides " + std::to_string(cache.spec().dim));
        }
        emb.model = &model;
    }

    auto instances = nlm::read_retrieval_jsonl(a.task);
    std::vector<std::pair<std::string, std::vector<float>>> candidates;
    std::map<std::string, size_t> candidate_index;
    for (const auto& id : cache.doc_ids()) {
        candidate_index[id] = candidates.size();
        candidates.emplace_back(id, emb.embed_vectors(cache.read_doc(id)));
    }
    std::vector<std::vector<float>> queries;
    for (const auto& inst : instances) {
        if (!inst.doc_id.empty()) {
            auto it = candidate_index.find(inst.doc_id);
            if (it == candidate_index.end()) {
                throw nlm::DataError("query document not in cache: " + inst.doc_id);
            }
            queries.push_back(candidates[it->second].second);
        } else {
            queries.push_back(emb.embed_text(inst.text));
        }
    }
    std::map<std::string, uint64_t> token_counts;
    if (!a.manifest.empty()) {
        for (const auto& d : nlm::read_manifest(a.manifest)) {
            token_counts[d.doc_id] = static_cast<uint64_t>(d.total_tokens);
        }
    }
    nlm::RetrievalReport report = nlm::retrieval_eval(instances, queries, candidates, token_counts);
    nlohmann::ordered_json j;
    nlm::to_json(j, report);
    j["pooling"] = a.pooling;
    write_report(a.out, j);
    return 0;
}

struct FinetuneArgs : EvalCommonArgs {
    double lr = 5e-5;
    int epochs = 3;
    int hidden = 0;
    double eval_frac = 0.2;
};

nlm::FinetuneConfig make_ft_config(const FinetuneArgs& a) {
    nlm::FinetuneConfig cfg;
    cfg.lr = a.lr;
    cfg.epochs = a.epochs;
    cfg.hidden = a.hidden;
    cfg.seed = a.seed;
    cfg.eval_frac = a.eval_frac;
    return cfg;
}

int run_eval_binary(const FinetuneArgs& a) {
    auto cache = nlm::EmbeddingCache::open(a.cache);
    if (a.model.empty()) throw nlm::DataError("fine-tuning needs --model");
    nlm::ModelParams<float> model = nlm::load_model<float>(a.model);
    if (model.config.d_in != cache.spec().dim) {
        throw nlm::DataError("model expects input dim " + std::to_string(model.config.d_in) +
                             ", cache provides " + std::to_string(cache.spec().dim));
    }
    auto instances = nlm::read_binary_jsonl(a.task);
    std::map<std::string, nlm::Matrix<float>> doc_vectors;
    for (const auto& id : cache.doc_ids()) doc_vectors.emplace(id, cache.read_doc(id));
    nlm::BinaryReport report = nlm::finetune_binary(model, make_text_encoder(cache, a), doc_vectors,
                                                    instances, make_ft_config(a), &std::cerr);
    nlohmann::ordered_json j;
    nlm::to_json(j, report);
    write_report(a.out, j);
    return 0;
}

int run_eval_choice(const FinetuneArgs& a) {
    auto cache = nlm::EmbeddingCache::open(a.cache);
    if (a.model.empty()) throw nlm::DataError("fine-tuning needs --model");
    nlm::ModelParams<float> model = nlm::load_model<float>(a.model);
    if (model.config.d_in != cache.spec().dim) {
        throw nlm::DataError("model expects input dim " + std::to_string(model.config.d_in) +
                             ", cache provides " + std::to_string(cache.spec().dim));
    }
    auto instances = nlm::read_choice_jsonl(a.task);
    std::map<std::string, nlm::Matrix<float>> doc_vectors;
    for (const auto& id : cache.doc_ids()) doc_vectors.emplace(id, cache.read_doc(id));
    nlm::ChoiceReport report = nlm::finetune_choice(model, make_text_encoder(cache, a), doc_vectors,
                                                    instances, make_ft_config(a), &std::cerr);
    nlohmann::ordered_json j;
    nlm::to_json(j, report);
    write_report(a.out, j);
    return 0;
}

struct SynthArgs {
    std::string out;
    std::string kind;  // pretrain | sts | binary | choice
    nlm::SynthConfig cfg;
};

int run_synth(const SynthArgs& a) {
    std::filesystem::create_directories(a.out);
    nlm::SynthCorpus corpus = nlm::make_corpus(a.cfg);
    nlm::write_corpus_jsonl(corpus.docs, a.out + "/corpus.jsonl");
    if (a.kind == "sts") {
        nlm::write_retrieval_jsonl(nlm::make_retrieval(corpus, a.cfg), a.out + "/retrieval.jsonl");
    } else if (a.kind == "binary") {
        nlm::write_binary_jsonl(nlm::make_binary(corpus, a.cfg), a.out + "/binary.jsonl");
    } else if (a.kind == "choice") {
        nlm::write_choice_jsonl(nlm::make_choice(corpus, a.cfg), a.out + "/choice.jsonl");
    } else if (a.kind != "pretrain") {
        throw nlm::DataError("unknown synth kind: " + a.kind);
    }
    nlohmann::ordered_json cj;
    nlm::to_json(cj, a.cfg);
    write_run_manifest(a.out, "synth " + a.kind, cj);
    std::cout << "wrote " << corpus.docs.size() << " documents to " << a.out << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"next-level masked modeling over chunk vectors"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string("nlm ") + nlm::kVersion);
    int exit_code = 0;

    uint64_t default_seed;
    try {
        default_seed = env_seed();
    } catch (const nlm::DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 3;
    }

    ChunkArgs chunk_args;
    auto* chunk = app.add_subcommand("chunk", "split documents into chunks");
    chunk->add_option("--corpus", chunk_args.corpus, "JSONL corpus with doc_id/text rows");
    chunk->add_option("--plaintext", chunk_args.plaintext, "plain text files (doc_id = stem)");
    chunk->add_option("--mode", chunk_args.mode, "fixed | sentence")->capture_default_str();
    chunk->add_option("--chunk-size", chunk_args.chunk_size, "tokens per chunk in fixed mode")
        ->capture_default_str();
    chunk->add_option("--out", chunk_args.out, "output manifest path")->required();
    chunk->add_option("--workers", chunk_args.workers, "worker threads (throughput only)")
        ->capture_default_str();
    chunk->callback([&]() { exit_code = run_chunk(chunk_args); });

    EncodeArgs encode_args;
    encode_args.seed = default_seed;
    auto* encode = app.add_subcommand("encode", "encode a chunk manifest into a vector cache");
    encode->add_option("--manifest", encode_args.manifest, "chunk manifest")->required();
    encode->add_option("--out", encode_args.out, "cache directory")->required();
    encode->add_option("--dim", encode_args.dim, "vector dimension")->capture_default_str();
    encode->add_option("--seed", encode_args.seed, "encoder seed (default: NLM_SEED or 0)");
    encode->add_flag("--no-normalize", encode_args.no_normalize, "store unnormalized vectors");
    encode->add_option("--encoder-name", encode_args.encoder_name, "encoder name recorded in the cache")
        ->capture_default_str();
    encode->add_option("--shard-docs", encode_args.shard_docs, "documents per shard")
        ->capture_default_str();
    encode->add_option("--workers", encode_args.workers, "worker threads (throughput only)")
        ->capture_default_str();
    encode->add_option("--import", encode_args.import_path, "import vectors instead of encoding");
    encode->add_option("--format", encode_args.format, "import format: jsonl | f32")
        ->capture_default_str();
    encode->callback([&]() { exit_code = run_encode(encode_args); });

    PretrainArgs pre_args;
    pre_args.seed = default_seed;
    auto* pre = app.add_subcommand("pretrain", "pretrain the chunk-level model");
    pre->add_option("--cache", pre_args.cache, "vector cache directory")->required();
    pre->add_option("--out", pre_args.out, "output directory")->required();
    pre->add_option("--seq-len", pre_args.seq_len, "sequence length")->capture_default_str();
    pre->add_option("--d-model", pre_args.d_model, "model width")->capture_default_str();
    pre->add_option("--n-layers", pre_args.n_layers, "transformer layers")->capture_default_str();
    pre->add_option("--n-heads", pre_args.n_heads, "attention heads")->capture_default_str();
    pre->add_option("--ffn-hidden", pre_args.ffn_hidden, "feed-forward width (0: 4 x d-model)")
        ->capture_default_str();
    pre->add_option("--head-hidden", pre_args.head_hidden, "prediction head width (0: d-model)")
        ->capture_default_str();
    pre->add_option("--dropout", pre_args.dropout, "dropout rate")->capture_default_str();
    pre->add_option("--loss-beta", pre_args.loss_beta, "smooth L1 transition point")
        ->capture_default_str();
    pre->add_flag("--post-ln", pre_args.post_ln, "post-layernorm residual layout");
    pre->add_option("--epochs", pre_args.epochs, "passes over the packed sequences")
        ->capture_default_str();
    pre->add_option("--steps", pre_args.steps, "total optimizer steps (overrides --epochs)");
    pre->add_option("--batch", pre_args.batch, "sequences per step")->capture_default_str();
    pre->add_option("--micro-batch", pre_args.micro_batch, "gradient accumulation slice (0: whole batch)")
        ->capture_default_str();
    pre->add_option("--lr", pre_args.lr, "peak learning rate")->capture_default_str();
    pre->add_option("--warmup-frac", pre_args.warmup_frac, "warmup fraction")->capture_default_str();
    pre->add_option("--weight-decay", pre_args.weight_decay, "decoupled weight decay")
        ->capture_default_str();
    pre->add_option("--mask-rate", pre_args.mask_rate, "chunk selection probability")
        ->capture_default_str();
    pre->add_option("--p-mask", pre_args.p_mask, "mask action probability")->capture_default_str();
    pre->add_option("--p-random", pre_args.p_random, "random-replacement probability")
        ->capture_default_str();
    pre->add_flag("--simple-masking", pre_args.simple_masking, "mask every selected chunk");
    pre->add_flag("--loss-on-masked-only", pre_args.loss_on_masked_only,
                  "restrict the loss to masked positions");
    pre->add_option("--seed", pre_args.seed, "training seed (default: NLM_SEED or 0)");
    pre->add_flag("--resume", pre_args.resume, "resume from --out (architecture flags are ignored)");
    pre->add_option("--checkpoint-every", pre_args.checkpoint_every, "steps between checkpoints (0: end only)")
        ->capture_default_str();
    pre->add_option("--metrics-every", pre_args.metrics_every, "steps between metric lines")
        ->capture_default_str();
    std::string preset;
    pre->add_option("--preset", preset, "desk: small model and batch for laptop-scale runs")
        ->check(CLI::IsMember({"desk"}));
    pre->callback([&]() {
        pre_args.desk = preset == "desk";
        exit_code = run_pretrain(pre_args);
    });

    EmbedArgs embed_args;
    auto* embed = app.add_subcommand("embed", "write document embeddings");
    embed->add_option("--cache", embed_args.cache, "vector cache directory")->required();
    embed->add_option("--model", embed_args.model, "model checkpoint");
    embed->add_option("--pooling", embed_args.pooling, "mean_raw | mean_contextualized")
        ->capture_default_str();
    embed->add_option("--out", embed_args.out, "output JSONL path")->required();
    embed->callback([&]() { exit_code = run_embed(embed_args); });

    auto* eval = app.add_subcommand("eval", "evaluate document embeddings");
    eval->require_subcommand(1);

    auto add_common = [&](CLI::App* cmd, EvalCommonArgs& a) {
        a.seed = default_seed;
        cmd->add_option("--cache", a.cache, "vector cache directory")->required();
        cmd->add_option("--model", a.model, "model checkpoint");
        cmd->add_option("--task", a.task, "task JSONL file")->required();
        cmd->add_option("--out", a.out, "report output path");
        cmd->add_option("--seed", a.seed, "evaluation seed (default: NLM_SEED or 0)");
        cmd->add_option("--encoder-seed", a.encoder_seed, "seed the cache was encoded with");
        cmd->add_option("--chunk-mode", a.chunk_mode, "fixed | sentence")->capture_default_str();
        cmd->add_option("--chunk-size", a.chunk_size, "tokens per chunk for query text")
            ->capture_default_str();
    };

    StsArgs sts_args;
    auto* sts = eval->add_subcommand("sts", "retrieval: MRR and HR@10");
    add_common(sts, sts_args);
    sts->add_option("--pooling", sts_args.pooling, "mean_raw | mean_contextualized")
        ->capture_default_str();
    sts->add_option("--manifest", sts_args.manifest, "chunk manifest (enables per-length bins)");
    sts->add_flag("--random-init", sts_args.random_init, "random untrained model baseline");
    sts->add_option("--seq-len", sts_args.seq_len, "random-init sequence length")->capture_default_str();
    sts->add_option("--d-model", sts_args.d_model, "random-init width")->capture_default_str();
    sts->add_option("--n-layers", sts_args.n_layers, "random-init layers")->capture_default_str();
    sts->add_option("--n-heads", sts_args.n_heads, "random-init heads")->capture_default_str();
    sts->callback([&]() { exit_code = run_eval_sts(sts_args); });

    FinetuneArgs bin_args;
    auto* bin = eval->add_subcommand("binary", "binary classification with fine-tuning");
    add_common(bin, bin_args);
    bin->add_option("--lr", bin_args.lr, "fine-tuning learning rate")->capture_default_str();
    bin->add_option("--epochs", bin_args.epochs, "fine-tuning epochs")->capture_default_str();
    bin->add_option("--hidden", bin_args.hidden, "classifier hidden width (0: auto)")
        ->capture_default_str();
    bin->add_option("--eval-frac", bin_args.eval_frac, "held-out fraction")->capture_default_str();
    bin->callback([&]() { exit_code = run_eval_binary(bin_args); });

    FinetuneArgs choice_args;
    auto* choice = eval->add_subcommand("choice", "four-way multiple choice with fine-tuning");
    add_common(choice, choice_args);
    choice->add_option("--lr", choice_args.lr, "fine-tuning learning rate")->capture_default_str();
    choice->add_option("--epochs", choice_args.epochs, "fine-tuning epochs")->capture_default_str();
    choice->add_option("--hidden", choice_args.hidden, "classifier hidden width (0: auto)")
        ->capture_default_str();
    choice->add_option("--eval-frac", choice_args.eval_frac, "held-out fraction")
        ->capture_default_str();
    choice->callback([&]() { exit_code = run_eval_choice(choice_args); });

    SynthArgs synth_args;
    synth_args.cfg.seed = default_seed;
    auto* synth = app.add_subcommand("synth", "generate synthetic corpora and tasks");
    synth->add_option("kind", synth_args.kind, "pretrain | sts | binary | choice")->required();
    synth->add_option("--out", synth_args.out, "output directory")->required();
    synth->add_option("--seed", synth_args.cfg.seed, "generator seed (default: NLM_SEED or 0)");
    synth->add_option("--docs", synth_args.cfg.n_docs, "documents")->capture_default_str();
    synth->add_option("--topics", synth_args.cfg.topics, "topic count")->capture_default_str();
    synth->add_option("--words-per-topic", synth_args.cfg.words_per_topic, "pool size per topic")
        ->capture_default_str();
    synth->add_option("--chunk-tokens", synth_args.cfg.chunk_tokens, "tokens per chunk")
        ->capture_default_str();
    synth->add_option("--min-chunks", synth_args.cfg.min_chunks, "minimum chunks per document")
        ->capture_default_str();
    synth->add_option("--max-chunks", synth_args.cfg.max_chunks, "maximum chunks per document")
        ->capture_default_str();
    synth->add_option("--topics-per-doc", synth_args.cfg.topics_per_doc, "topics per document")
        ->capture_default_str();
    synth->add_option("--filler-frac", synth_args.cfg.filler_frac, "shared-pool chunk probability")
        ->capture_default_str();
    synth->add_option("--noise-frac", synth_args.cfg.noise_frac, "off-topic token probability")
        ->capture_default_str();
    synth->add_option("--query-purity", synth_args.cfg.query_purity, "gold topic token mass in queries")
        ->capture_default_str();
    synth->callback([&]() { exit_code = run_synth(synth_args); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const nlm::DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 3;
    } catch (const nlm::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << '\n';
        return 4;
    }
    return exit_code;
}
