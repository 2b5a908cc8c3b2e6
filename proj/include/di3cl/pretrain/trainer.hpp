#pragma once

// Contrastive pre-training loop: two views per image, online/target forward,
// deep InfoNCE, shallow contour-consistency InfoNCE, local dynamic-instance
// regression, SGD on the online network, EMA of the target, FIFO negatives.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "di3cl/core/archive.hpp"
#include "di3cl/core/rng.hpp"
#include "di3cl/datapipe/dataset.hpp"
#include "di3cl/encoder/network.hpp"
#include "di3cl/geometry.hpp"
#include "di3cl/losses.hpp"
#include "di3cl/memory_bank.hpp"
#include "di3cl/nn/optim.hpp"
#include "di3cl/pretrain/config.hpp"

namespace di3cl {

namespace streams {
inline constexpr std::uint64_t init = 1;
inline constexpr std::uint64_t augment = 2;
inline constexpr std::uint64_t shuffle = 3;
inline constexpr std::uint64_t warmup = 4;
}  // namespace streams

/// Views, boxes and pairing for one step. Row i < images pairs online view 1
/// with target view 2; in symmetric mode rows images..2*images-1 hold the
/// swapped ordering.
template <typename T>
struct PairBatch {
    Tensor<T> online_views, target_views;            // (1, B, S, S)
    std::vector<BoxSet> online_boxes, target_boxes;  // view-pixel frame, one set per row
    int images = 0;
    int fallbacks = 0;  // view pairs that needed the center-crop fallback
};

template <typename T>
PairBatch<T> make_pair_batch(std::span<const Image<T>> images, const PretrainConfig& cfg, Rng& rng) {
    const int n = static_cast<int>(images.size());
    std::vector<Image<T>> v1, v2;
    PairBatch<T> pb;
    pb.images = n;
    std::vector<BoxSet> b1, b2;
    for (const auto& img : images) {
        const auto vp = sample_view_pair(rng, cfg.augment, img.dim(2), img.dim(3), cfg.min_side);
        pb.fallbacks += vp.fallback ? 1 : 0;
        v1.push_back(apply_view(img, vp.first));
        v2.push_back(apply_view(img, vp.second));
        BoxSet s1, s2;
        if (cfg.loss.enable_di) {
            for (const auto& b : sample_boxes(vp.region, cfg.k_boxes, cfg.min_side, rng)) {
                s1.push_back(map_box_to_view(b, vp.first));
                s2.push_back(map_box_to_view(b, vp.second));
            }
        }
        b1.push_back(std::move(s1));
        b2.push_back(std::move(s2));
    }
    std::vector<Image<T>> on = v1, tg = v2;
    pb.online_boxes = b1;
    pb.target_boxes = b2;
    if (cfg.loss.symmetric) {
        on.insert(on.end(), v2.begin(), v2.end());
        tg.insert(tg.end(), v1.begin(), v1.end());
        pb.online_boxes.insert(pb.online_boxes.end(), b2.begin(), b2.end());
        pb.target_boxes.insert(pb.target_boxes.end(), b1.begin(), b1.end());
    }
    pb.online_views = stack_images<T>(on);
    pb.target_views = stack_images<T>(tg);
    return pb;
}

template <typename T>
struct ObjectiveResult {
    LossReport report;
    RowMatrix<T> target_deep;     // target deep projections, one row per batch row
    RowMatrix<T> target_shallow;  // target shallow projections
};

namespace detail {

template <typename T>
RowMatrix<T> pool_rois(const Tensor<T>& fmap, const std::vector<BoxSet>& boxes, int stride) {
    std::size_t rows = 0;
    for (const auto& s : boxes) rows += s.size();
    RowMatrix<T> out(static_cast<Eigen::Index>(rows), fmap.dim(0));
    Eigen::Index r = 0;
    for (std::size_t n = 0; n < boxes.size(); ++n)
        for (const auto& b : boxes[n]) {
            const auto v = roi_align_1x1(fmap, static_cast<int>(n), box_to_feature_coords(b, stride));
            out.row(r++) = Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(v.data(), fmap.dim(0));
        }
    return out;
}

template <typename T>
void pool_rois_backward(Tensor<T>& grad_fmap, const std::vector<BoxSet>& boxes, int stride, const RowMatrix<T>& grad) {
    Eigen::Index r = 0;
    std::vector<T> g(static_cast<std::size_t>(grad.cols()));
    for (std::size_t n = 0; n < boxes.size(); ++n)
        for (const auto& b : boxes[n]) {
            for (Eigen::Index c = 0; c < grad.cols(); ++c) g[static_cast<std::size_t>(c)] = grad(r, c);
            roi_align_1x1_backward<T>(grad_fmap, static_cast<int>(n), box_to_feature_coords(b, stride), g);
            ++r;
        }
}

}  // namespace detail

/// Forward of both networks and the three losses; when `backward` is set,
/// accumulates gradients of the combined objective into the online encoder and
/// predictor. Target parameters never receive gradient.
template <typename T>
ObjectiveResult<T> compute_objective(NetworkPair<T>& net, const MemoryBank<T>& deep_bank, const MemoryBank<T>& shallow_bank,
                                     const PairBatch<T>& batch, const LossConfig& loss, bool backward, long step = 0) {
    const nn::Mode online_mode = backward ? nn::Mode::train() : nn::Mode::no_grad();
    const nn::Mode target_mode = nn::Mode::no_grad();
    const T tau = static_cast<T>(loss.tau);
    const int cc_tap = net.online.cc_tap();
    const int deep_stride = Backbone<T>::stride(4);

    auto taps1 = net.online.backbone.forward_taps(batch.online_views, online_mode);
    auto taps2 = net.target.backbone.forward_taps(batch.target_views, target_mode);

    ObjectiveResult<T> res;
    res.report.step = step;

    // Deep instance discrimination.
    const RowMatrix<T> g1 = nn::global_pool(taps1.deep());
    const RowMatrix<T> p1 = net.online.proj_deep.forward(g1, online_mode);
    res.target_deep = net.target.proj_deep.forward(nn::global_pool(taps2.deep()), target_mode);
    RowMatrix<T> dp1;
    res.report.l_d = info_nce_batch<T>(p1, res.target_deep, deep_bank.negatives(), tau, backward ? &dp1 : nullptr);

    // Contour consistency on the shallow tap.
    res.target_shallow = net.target.proj_shallow.forward(nn::global_pool(taps2.tap(cc_tap)), target_mode);
    RowMatrix<T> dps;
    if (loss.enable_cc) {
        const RowMatrix<T> p1s = net.online.proj_shallow.forward(nn::global_pool(taps1.tap(cc_tap)), online_mode);
        res.report.l_s = info_nce_batch<T>(p1s, res.target_shallow, shallow_bank.negatives(), tau, backward ? &dps : nullptr);
    }

    // Dynamic instances: RoI embeddings of matching boxes on the deep maps.
    RowMatrix<T> df1;
    if (loss.enable_di) {
        const RowMatrix<T> r1 = detail::pool_rois(taps1.deep(), batch.online_boxes, deep_stride);
        const RowMatrix<T> r2 = detail::pool_rois(taps2.deep(), batch.target_boxes, deep_stride);
        const RowMatrix<T> z1 = net.online.proj_local.forward(r1, online_mode);
        const RowMatrix<T> f1 = net.predictor.forward(z1, online_mode);
        const RowMatrix<T> z2 = net.target.proj_local.forward(r2, target_mode);
        res.report.l_l = di_loss<T>(f1, z2, backward ? &df1 : nullptr);
    }

    res.report.total = combine(res.report.l_d, res.report.l_s, res.report.l_l, loss, step);
    if (!backward) return res;

    std::array<Tensor<T>, 4> grads;
    grads[3] = nn::global_pool_backward<T>(net.online.proj_deep.backward(dp1 * static_cast<T>(loss.alpha)), taps1.deep().shape());
    if (loss.enable_cc) {
        auto gs = nn::global_pool_backward<T>(net.online.proj_shallow.backward(dps * static_cast<T>(1.0 - loss.alpha)),
                                              taps1.tap(cc_tap).shape());
        auto& slot = grads[static_cast<std::size_t>(cc_tap - 1)];
        if (slot.empty()) slot = std::move(gs);
        else slot += gs;
    }
    if (loss.enable_di) {
        const RowMatrix<T> dz1 = net.predictor.backward(df1 * static_cast<T>(loss.beta));
        const RowMatrix<T> dr1 = net.online.proj_local.backward(dz1);
        detail::pool_rois_backward(grads[3], batch.online_boxes, deep_stride, dr1);
    }
    net.online.backbone.backward_taps(grads);
    return res;
}

/// Everything needed to continue a run bit-for-bit.
template <typename T>
struct TrainState {
    NetworkPair<T> pair;
    MemoryBank<T> deep_bank, shallow_bank;
    nn::Sgd<T> optimizer;
    long step = 0;
    int epoch = 0;  // completed epochs
    long total_steps = 0;
    std::vector<double> epoch_losses;

    TrainState() = default;
    explicit TrainState(const PretrainConfig& cfg) {
        cfg.validate();
        Rng rng = derive_rng(cfg.seed, streams::init);
        pair = NetworkPair<T>(cfg.encoder.backbone, cfg.encoder.heads, cfg.encoder.cc_tap, static_cast<T>(cfg.encoder.ema_m), rng);
        deep_bank = MemoryBank<T>(cfg.bank_capacity, cfg.encoder.heads.out);
        shallow_bank = MemoryBank<T>(cfg.bank_capacity, cfg.encoder.heads.out);
        optimizer = nn::Sgd<T>(cfg.momentum, cfg.weight_decay);
    }
};

/// Enqueues target projections of the first `rows` batch rows into both banks.
template <typename T>
void enqueue_targets(TrainState<T>& st, const ObjectiveResult<T>& res, int rows) {
    st.deep_bank.enqueue(res.target_deep.topRows(rows));
    st.shallow_bank.enqueue(res.target_shallow.topRows(rows));
}

/// One optimization step on a batch of source images.
template <typename T>
LossReport train_step(std::span<const Image<T>> images, TrainState<T>& st, const PretrainConfig& cfg) {
    Rng rng = derive_rng(cfg.seed, streams::augment, static_cast<std::uint64_t>(st.step));
    const auto batch = make_pair_batch(images, cfg, rng);
    auto params = st.pair.trainable();
    nn::zero_grad(params);
    auto res = compute_objective(st.pair, st.deep_bank, st.shallow_bank, batch, cfg.loss, true, st.step);
    const double lr = cosine_lr(st.step, st.total_steps, cfg.base_lr, cfg.min_lr);
    st.optimizer.step(params, lr);
    st.pair.ema_update();
    enqueue_targets(st, res, batch.images);
    ++st.step;
    return res.report;
}

/// Fills both banks with target projections of ceil(M / N) batches, without
/// optimizer steps.
template <typename T>
void warm_up_banks(TrainState<T>& st, std::span<const Image<T>> data, const PretrainConfig& cfg) {
    Rng order_rng = derive_rng(cfg.seed, streams::warmup);
    const auto batches = make_batches(data.size(), cfg.batch_size, order_rng, true);
    if (batches.empty()) throw DataError("dataset smaller than one batch");
    const int needed = (cfg.bank_capacity + cfg.batch_size - 1) / cfg.batch_size;
    PretrainConfig target_only = cfg;
    target_only.loss.enable_di = false;
    target_only.loss.symmetric = false;
    for (int i = 0; i < needed; ++i) {
        const auto& idx = batches[static_cast<std::size_t>(i) % batches.size()];
        std::vector<Image<T>> imgs;
        for (auto j : idx) imgs.push_back(data[j]);
        Rng rng = derive_rng(cfg.seed, streams::warmup, static_cast<std::uint64_t>(i) + 1);
        const auto pb = make_pair_batch<T>(imgs, target_only, rng);
        auto taps = st.pair.target.backbone.forward_taps(pb.target_views, nn::Mode::no_grad());
        st.deep_bank.enqueue(st.pair.target.proj_deep.forward(nn::global_pool(taps.deep()), nn::Mode::no_grad()));
        st.shallow_bank.enqueue(
            st.pair.target.proj_shallow.forward(nn::global_pool(taps.tap(st.pair.online.cc_tap())), nn::Mode::no_grad()));
    }
}

// ---------------------------------------------------------------------------
// Checkpoints

inline std::vector<std::int64_t> backbone_meta(const BackboneConfig& b) {
    std::vector<std::int64_t> m{static_cast<std::int64_t>(b.block), b.stem_channels, b.stem_kernel, b.stem_pool ? 1 : 0};
    for (int w : b.widths) m.push_back(w);
    for (int d : b.depths) m.push_back(d);
    return m;
}

inline BackboneConfig backbone_from_meta(const std::vector<std::int64_t>& m) {
    if (m.size() != 12) throw IoError("corrupt backbone metadata");
    BackboneConfig b;
    b.block = static_cast<BlockType>(m[0]);
    b.stem_channels = static_cast<int>(m[1]);
    b.stem_kernel = static_cast<int>(m[2]);
    b.stem_pool = m[3] != 0;
    for (std::size_t i = 0; i < 4; ++i) {
        b.widths[i] = static_cast<int>(m[4 + i]);
        b.depths[i] = static_cast<int>(m[8 + i]);
    }
    return b;
}

namespace detail {

template <typename T>
void put_params(Archive& a, const std::string& prefix, const nn::ParamList<T>& params) {
    for (auto* p : params) a.put<T>(prefix + p->name, p->value);
}

template <typename T>
void get_params(const Archive& a, const std::string& prefix, const nn::ParamList<T>& params) {
    for (auto* p : params) {
        auto v = a.get<T>(prefix + p->name);
        if (v.size() != p->value.size()) throw IoError("checkpoint shape mismatch for " + prefix + p->name);
        p->value.assign(v.begin(), v.end());
    }
}

template <typename T>
void put_buffers(Archive& a, const std::string& prefix, const nn::BufferList<T>& bufs) {
    for (const auto& [name, buf] : bufs) a.put<T>(prefix + name, *buf);
}

template <typename T>
void get_buffers(const Archive& a, const std::string& prefix, const nn::BufferList<T>& bufs) {
    for (const auto& [name, buf] : bufs) {
        auto v = a.get<T>(prefix + name);
        if (v.size() != buf->size()) throw IoError("checkpoint shape mismatch for " + prefix + name);
        *buf = std::move(v);
    }
}

template <typename T>
void put_bank(Archive& a, const std::string& prefix, const MemoryBank<T>& bank) {
    const auto& s = bank.storage();
    a.put<T>(prefix + ".entries", std::span<const T>(s.data(), static_cast<std::size_t>(s.size())));
    a.put_int(prefix + ".head", bank.head());
    a.put_int(prefix + ".filled", bank.filled());
}

template <typename T>
void get_bank(const Archive& a, const std::string& prefix, MemoryBank<T>& bank) {
    const auto v = a.get<T>(prefix + ".entries");
    if (v.size() != static_cast<std::size_t>(bank.capacity()) * bank.dim()) throw IoError("checkpoint bank size mismatch");
    RowMatrix<T> m = Eigen::Map<const RowMatrix<T>>(v.data(), bank.capacity(), bank.dim());
    bank.restore(m, static_cast<int>(a.get_int(prefix + ".head")), static_cast<int>(a.get_int(prefix + ".filled")));
}

}  // namespace detail

inline constexpr const char* kCheckpointFormat = "di3cl-pretrain-checkpoint/1";
inline constexpr const char* kBackboneFormat = "di3cl-backbone/1";

template <typename T>
void save_checkpoint(const std::filesystem::path& path, TrainState<T>& st, const PretrainConfig& cfg, const std::string& config_text) {
    Archive a;
    a.put_string("format", kCheckpointFormat);
    a.put_string("config", config_text);
    a.put<std::int64_t>("meta.backbone", backbone_meta(cfg.encoder.backbone));
    a.put<std::int64_t>("meta.heads", std::vector<std::int64_t>{cfg.encoder.heads.hidden, cfg.encoder.heads.out, cfg.encoder.cc_tap});
    nn::ParamList<T> on, tg, pred;
    st.pair.online.params(on);
    st.pair.target.params(tg);
    st.pair.predictor.params(pred);
    detail::put_params(a, "online.", on);
    detail::put_params(a, "target.", tg);
    detail::put_params(a, "pred.", pred);
    nn::BufferList<T> bon, btg;
    st.pair.online.buffers(bon);
    st.pair.target.buffers(btg);
    detail::put_buffers(a, "online.buf.", bon);
    detail::put_buffers(a, "target.buf.", btg);
    const auto& vel = st.optimizer.velocity();
    a.put_int("opt.count", static_cast<std::int64_t>(vel.size()));
    for (std::size_t i = 0; i < vel.size(); ++i) a.put<T>("opt.v." + std::to_string(i), vel[i]);
    detail::put_bank(a, "bank.deep", st.deep_bank);
    detail::put_bank(a, "bank.shallow", st.shallow_bank);
    a.put_int("state.step", st.step);
    a.put_int("state.epoch", st.epoch);
    a.put_int("state.total_steps", st.total_steps);
    a.put<double>("state.epoch_losses", st.epoch_losses);
    a.put_double("state.momentum", static_cast<double>(st.pair.momentum()));
    a.save(path);
}

/// Restores into a state constructed from the same configuration.
template <typename T>
void load_checkpoint(const std::filesystem::path& path, TrainState<T>& st) {
    const Archive a = Archive::load(path);
    if (a.get_string("format") != kCheckpointFormat) throw IoError("not a pre-training checkpoint: " + path.string());
    nn::ParamList<T> on, tg, pred;
    st.pair.online.params(on);
    st.pair.target.params(tg);
    st.pair.predictor.params(pred);
    detail::get_params(a, "online.", on);
    detail::get_params(a, "target.", tg);
    detail::get_params(a, "pred.", pred);
    nn::BufferList<T> bon, btg;
    st.pair.online.buffers(bon);
    st.pair.target.buffers(btg);
    detail::get_buffers(a, "online.buf.", bon);
    detail::get_buffers(a, "target.buf.", btg);
    auto& vel = st.optimizer.velocity();
    vel.clear();
    const auto count = a.get_int("opt.count");
    for (std::int64_t i = 0; i < count; ++i) vel.push_back(a.get<T>("opt.v." + std::to_string(i)));
    detail::get_bank(a, "bank.deep", st.deep_bank);
    detail::get_bank(a, "bank.shallow", st.shallow_bank);
    st.step = a.get_int("state.step");
    st.epoch = static_cast<int>(a.get_int("state.epoch"));
    st.total_steps = a.get_int("state.total_steps");
    st.epoch_losses = a.get<double>("state.epoch_losses");
}

/// Online backbone only (no heads), for downstream fine-tuning.
template <typename T>
void export_backbone(const std::filesystem::path& path, TrainState<T>& st, const PretrainConfig& cfg) {
    Archive a;
    a.put_string("format", kBackboneFormat);
    a.put<std::int64_t>("meta.backbone", backbone_meta(cfg.encoder.backbone));
    nn::ParamList<T> p;
    st.pair.online.backbone.params(p);
    detail::put_params(a, "backbone.", p);
    nn::BufferList<T> b;
    st.pair.online.backbone.buffers(b);
    detail::put_buffers(a, "backbone.buf.", b);
    a.save(path);
}

/// Backbone configuration stored in a checkpoint or backbone export.
inline BackboneConfig read_backbone_config(const std::filesystem::path& path) {
    return backbone_from_meta(Archive::load(path).get<std::int64_t>("meta.backbone"));
}

/// Loads backbone weights from either a backbone export or a full checkpoint
/// (online network).
template <typename T>
void load_backbone(const std::filesystem::path& path, Backbone<T>& bb) {
    const Archive a = Archive::load(path);
    const auto fmt = a.get_string("format");
    std::string prefix, buf_prefix;
    if (fmt == kBackboneFormat) {
        prefix = "backbone.";
        buf_prefix = "backbone.buf.";
    } else if (fmt == kCheckpointFormat) {
        prefix = "online.";
        buf_prefix = "online.buf.";
    } else {
        throw IoError("unrecognized archive format '" + fmt + "' in " + path.string());
    }
    nn::ParamList<T> p;
    bb.params(p);
    detail::get_params(a, prefix, p);
    nn::BufferList<T> b;
    bb.buffers(b);
    detail::get_buffers(a, buf_prefix, b);
}

// ---------------------------------------------------------------------------
// Driver

struct PretrainResult {
    std::filesystem::path best_checkpoint;
    std::filesystem::path best_backbone;
    std::filesystem::path final_backbone;
    int best_epoch = -1;
    std::vector<double> epoch_losses;
};

inline std::filesystem::path epoch_checkpoint_path(const std::filesystem::path& dir, int epoch) {
    std::ostringstream name;
    name << "checkpoint_epoch_" << std::setw(3) << std::setfill('0') << epoch << ".ckpt";
    return dir / name.str();
}

/// Trains cfg.epochs epochs (continuing from `resume` when given), writing a
/// checkpoint after every epoch, a per-step metrics log, and copies of the
/// lowest-mean-loss epoch as best.ckpt / backbone_best.bin.
template <typename T>
PretrainResult run_pretraining(const PretrainConfig& cfg, std::span<const Image<T>> data, const std::filesystem::path& run_dir,
                               const std::string& config_text, const std::optional<std::filesystem::path>& resume = {},
                               std::ostream* log = nullptr) {
    cfg.validate();
    if (data.empty()) throw DataError("pre-training dataset is empty");
    if (data.size() < static_cast<std::size_t>(cfg.batch_size))
        throw DataError("pre-training dataset has fewer images than pretrain.batch_size");
    std::filesystem::create_directories(run_dir);

    TrainState<T> st(cfg);
    const long steps_per_epoch = static_cast<long>(data.size() / static_cast<std::size_t>(cfg.batch_size));
    st.total_steps = steps_per_epoch * cfg.epochs;
    if (resume) {
        load_checkpoint(*resume, st);
        st.total_steps = steps_per_epoch * cfg.epochs;
    } else if (cfg.warmup) {
        warm_up_banks<T>(st, data, cfg);
    }

    const bool append = resume && std::filesystem::exists(run_dir / "metrics.tsv");
    std::ofstream metrics(run_dir / "metrics.tsv", append ? std::ios::app : std::ios::trunc);
    if (!metrics) throw IoError("cannot open metrics log in " + run_dir.string());
    if (!append) metrics << "step\tl_d\tl_s\tl_l\ttotal\tlr\n";
    metrics << std::setprecision(9);

    PretrainResult result;
    for (int epoch = st.epoch; epoch < cfg.epochs; ++epoch) {
        Rng order = derive_rng(cfg.seed, streams::shuffle, static_cast<std::uint64_t>(epoch));
        const auto batches = make_batches(data.size(), cfg.batch_size, order, true);
        double sum = 0;
        for (std::size_t bi = 0; bi < batches.size(); ++bi) {
            std::vector<Image<T>> imgs;
            for (auto j : batches[bi]) imgs.push_back(data[j]);
            const double lr = cosine_lr(st.step, st.total_steps, cfg.base_lr, cfg.min_lr);
            LossReport rep;
            try {
                rep = train_step<T>(imgs, st, cfg);
            } catch (const DivergenceError& e) {
                std::ostringstream msg;
                msg << e.what() << "; epoch " << epoch << ", batch " << bi << ", image indices";
                for (auto j : batches[bi]) msg << ' ' << j;
                throw DivergenceError(msg.str());
            }
            metrics << rep.step << '\t' << rep.l_d << '\t' << rep.l_s << '\t' << rep.l_l << '\t' << rep.total << '\t' << lr << '\n';
            sum += rep.total;
        }
        metrics.flush();
        const double mean = sum / static_cast<double>(batches.size());
        st.epoch_losses.push_back(mean);
        st.epoch = epoch + 1;
        try {
            save_checkpoint(epoch_checkpoint_path(run_dir, epoch), st, cfg, config_text);
            const bool best = std::all_of(st.epoch_losses.begin(), st.epoch_losses.end() - 1, [&](double l) { return mean < l; });
            if (best) {
                save_checkpoint(run_dir / "best.ckpt", st, cfg, config_text);
                export_backbone(run_dir / "backbone_best.bin", st, cfg);
            }
        } catch (const IoError& e) {
            throw IoError(std::string(e.what()) + " (epoch " + std::to_string(epoch) + ")");
        }
        if (log) *log << "epoch " << epoch << " mean loss " << mean << '\n';
    }
    // The contrastive loss rises as the bank fills with harder negatives, so the
    // lowest-loss epoch is not a good transfer choice; the last one is exported too.
    export_backbone(run_dir / "backbone_final.bin", st, cfg);
    result.final_backbone = run_dir / "backbone_final.bin";
    result.epoch_losses = st.epoch_losses;
    result.best_epoch = static_cast<int>(std::min_element(st.epoch_losses.begin(), st.epoch_losses.end()) - st.epoch_losses.begin());
    result.best_checkpoint = run_dir / "best.ckpt";
    result.best_backbone = run_dir / "backbone_best.bin";
    return result;
}

}  // namespace di3cl
